#include "oneframe/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "oneframe/checkpoint.hpp"
#include "oneframe/error.hpp"
#include "oneframe/fusion.hpp"
#include "oneframe/objectives.hpp"
#include "oneframe/qa.hpp"
#include "oneframe/temporal.hpp"

namespace oneframe {

void ScheduleConfig::validate() const {
  if (warmup_steps < 0 || warmup_steps > total_steps) throw ConfigError("need 0 <= warmup_steps <= total_steps");
  if (total_steps < 1) throw ConfigError("total_steps must be positive");
  if (!(min_lr <= peak_lr) || min_lr < 0.0) throw ConfigError("need 0 <= min_lr <= peak_lr");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
}

double lr_at_step(int step, const ScheduleConfig& s) {
  if (step < 0) throw InputError("lr_at_step: negative step");
  if (step >= s.total_steps) return s.min_lr;
  if (step < s.warmup_steps) return s.peak_lr * static_cast<double>(step) / s.warmup_steps;
  const double progress = static_cast<double>(step - s.warmup_steps) / (s.total_steps - s.warmup_steps);
  return s.min_lr + 0.5 * (s.peak_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

double AdamW::scale_for(const std::string& name) const {
  double scale = 1.0;
  std::size_t best = 0;
  for (const auto& [prefix, factor] : lr_scale_) {
    if (prefix.size() >= best && name.compare(0, prefix.size(), prefix) == 0) {
      best = prefix.size();
      scale = factor;
    }
  }
  return scale;
}

void AdamW::step(ParameterStore& params, double base_lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(sched_.beta1, t_);
  const double c2 = 1.0 - std::pow(sched_.beta2, t_);
  for (auto& [name, p] : params.all()) {
    if (p.grad.size() == 0) p.grad = Mat::Zero(p.value.rows(), p.value.cols());
    auto [it, fresh] = moments_.try_emplace(name);
    if (fresh) {
      it->second.first = Mat::Zero(p.value.rows(), p.value.cols());
      it->second.second = Mat::Zero(p.value.rows(), p.value.cols());
    }
    Mat& m = it->second.first;
    Mat& v = it->second.second;
    const double lr = base_lr * scale_for(name);
    if (p.decay) p.value *= 1.0 - lr * sched_.weight_decay;
    m = sched_.beta1 * m + (1.0 - sched_.beta1) * p.grad;
    v = sched_.beta2 * v + (1.0 - sched_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + sched_.adam_eps);
  }
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::vtc: return "vtc";
    case Objective::mlm: return "mlm";
    case Objective::vtm: return "vtm";
    case Objective::qa: return "qa";
    case Objective::retrieval_finetune: return "retrieval-finetune";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  for (auto o : {Objective::vtc, Objective::mlm, Objective::vtm, Objective::qa, Objective::retrieval_finetune}) {
    if (to_string(o) == name) return o;
  }
  throw ConfigError("unknown objective '" + name + "'");
}

std::set<Objective> expand_objectives(const std::set<Objective>& objectives) {
  std::set<Objective> out;
  for (auto o : objectives) {
    if (o == Objective::retrieval_finetune) {
      out.insert(Objective::vtc);
      out.insert(Objective::vtm);
    } else {
      out.insert(o);
    }
  }
  return out;
}

nlohmann::json to_json(const StepRecord& r, bool with_qa) {
  nlohmann::json j{{"step", r.step},
                   {"lr", fixed_precision(r.lr)},
                   {"loss_total", fixed_precision(r.loss_total)},
                   {"loss_vtc", fixed_precision(r.loss_vtc)},
                   {"loss_mlm", fixed_precision(r.loss_mlm)},
                   {"loss_vtm", fixed_precision(r.loss_vtm)}};
  if (with_qa) j["loss_qa"] = fixed_precision(r.loss_qa);
  return j;
}

ScheduleConfig make_schedule(const TrainOptions& o, int dataset_size) {
  if (o.epochs < 1) throw ConfigError("epochs must be positive");
  if (o.batch_size < 1) throw ConfigError("batch_size must be positive");
  const int per_epoch = (dataset_size + o.batch_size - 1) / o.batch_size;
  ScheduleConfig s;
  s.peak_lr = o.peak_lr;
  s.min_lr = o.min_lr;
  s.total_steps = o.epochs * per_epoch;
  s.warmup_steps = std::clamp(static_cast<int>(std::lround(o.warmup_epochs * per_epoch)), 0, s.total_steps);
  s.weight_decay = o.weight_decay;
  s.clip_norm = o.clip_norm;
  s.validate();
  return s;
}

namespace {

std::vector<int> answer_ids(const Tokenizer& tok, const std::string& answer) {
  std::vector<int> ids;
  for (const auto& w : Tokenizer::split_words(answer)) ids.push_back(tok.id_of(w));
  return ids;
}

struct StepLosses {
  ag::Var total;
  double vtc = 0.0;
  double mlm = 0.0;
  double vtm = 0.0;
  double qa = 0.0;
};

class Trainer {
 public:
  Trainer(Model& model, const Dataset& data, const Tokenizer& tok, const TrainOptions& opt)
      : model_(model), data_(data), tok_(tok), opt_(opt), objectives_(expand_objectives(opt.objectives)) {
    const auto& cfg = model.config();
    if (opt.frames_per_step < 1) throw ConfigError("frames_per_step must be positive");
    if (has(Objective::qa) && !model.has_decoder()) throw ConfigError("qa objective needs the answer decoder");
    if ((has(Objective::vtc) || has(Objective::vtm)) && data.size() < 2) {
      throw InputError("contrastive objectives need at least two videos");
    }
    temporal_ = opt.frames_per_step > 1 && model.has_temporal();
    for (const auto& ex : data) {
      validate_example(ex);
      if (ex.frames.front().size != cfg.image_size || ex.frames.front().channels != cfg.channels) {
        throw ConfigError("video " + ex.video_id + " does not match the model frame shape");
      }
      if (has(Objective::qa) && !ex.meta.contains("answer")) {
        throw InputError("video " + ex.video_id + " has no answer for the qa objective");
      }
    }
  }

  bool has(Objective o) const { return objectives_.contains(o); }

  StepLosses forward(ag::Tape& tape, const std::vector<int>& batch, int step) {
    const ModelConfig& cfg = model_.config();
    const int n = static_cast<int>(batch.size());
    const int F = opt_.frames_per_step;
    const int lv = cfg.vision_len();

    // Frames, augmentation and caption choice: one stream each.
    Rng frame_rng = make_rng(opt_.seed, "frames", static_cast<std::uint64_t>(step));
    Rng aug_rng = make_rng(opt_.seed, "augment", static_cast<std::uint64_t>(step));
    Rng cap_rng = make_rng(opt_.seed, "captions", static_cast<std::uint64_t>(step));
    Rng mask_rng = make_rng(opt_.seed, "masking", static_cast<std::uint64_t>(step));
    Rng neg_rng = make_rng(opt_.seed, "negatives", static_cast<std::uint64_t>(step));

    std::vector<Frame> frames;
    frames.reserve(static_cast<std::size_t>(n * F));
    std::vector<std::string> captions;
    for (int vi : batch) {
      const VideoExample& ex = data_[static_cast<std::size_t>(vi)];
      const int T = static_cast<int>(ex.frames.size());
      const std::vector<int> idx = F == 1 ? std::vector<int>{sample_train_frame(T, frame_rng)}
                                          : sample_train_clip(T, F, frame_rng);
      if (opt_.augment) {
        const Augmentation aug = sample_augmentation(cfg.image_size, ex.flip_safe, aug_rng);
        for (int i : idx) frames.push_back(apply_augmentation(ex.frames[static_cast<std::size_t>(i)], aug));
      } else {
        for (int i : idx) frames.push_back(ex.frames[static_cast<std::size_t>(i)]);
      }
      captions.push_back(ex.captions[uniform_index(cap_rng, ex.captions.size())]);
    }
    std::vector<const Frame*> frame_ptrs;
    for (const auto& f : frames) frame_ptrs.push_back(&f);

    std::vector<int> groups;
    {
      std::map<std::string, int> ids;
      for (const auto& c : captions) groups.push_back(ids.try_emplace(c, static_cast<int>(ids.size())).first->second);
    }

    SequenceBatch vis = encode_frames(model_, tape, frame_ptrs);
    ag::Var visual_states = vis.states;
    ag::Var pooled_v;
    int visual_len = lv;
    if (F == 1) {
      pooled_v = pooled_rows(vis);
    } else {
      if (temporal_) {
        SequenceBatch enc = temporal_encode(model_, tape, vis, n, F);
        visual_states = enc.states;
        pooled_v = temporal_pooled(tape, enc, F, lv);
      } else {
        SequenceBatch grouped{vis.states, n, F * lv, vis.valid};
        pooled_v = temporal_pooled(tape, grouped, F, lv);
      }
      visual_len = F * lv;
    }
    std::vector<FusePair> positives;
    for (int b = 0; b < n; ++b) positives.push_back({b, b * visual_len, visual_len});

    StepLosses out;
    std::vector<ag::Var> terms;
    const bool need_text = has(Objective::vtc) || has(Objective::vtm);
    std::vector<TokenSequence> tokens;
    if (!has(Objective::qa) || need_text || has(Objective::mlm)) {
      for (const auto& c : captions) tokens.push_back(tok_.encode(c, cfg.max_text_len));
    }

    if (need_text) {
      SequenceBatch txt = encode_texts(model_, tape, tokens);
      ag::Var v = project(model_, tape, pooled_v, Head::vision);
      ag::Var t = project(model_, tape, pooled_rows(txt), Head::text);
      ag::Var tau = temperature(model_, tape);
      if (has(Objective::vtc)) {
        ag::Var l = ag::scale(vtc_loss(v, t, tau, groups), 1.0 / n);
        out.vtc = l.value()(0, 0);
        terms.push_back(l);
      }
      if (has(Objective::vtm)) {
        const Mat sim = v.value() * t.value().transpose();
        const HardNegatives neg = sample_hard_negatives(sim, tau.value()(0, 0), groups, neg_rng);
        const auto pairs = build_match_pairs(n, neg);
        std::vector<FusePair> fp;
        for (const auto& p : pairs) fp.push_back({p.text, p.video * visual_len, visual_len});
        FusedBatch fused = fuse(model_, tape, txt, visual_states, fp);
        ag::Var l = vtm_loss(fused.match_logits, pairs);
        out.vtm = l.value()(0, 0);
        terms.push_back(l);
      }
    }

    if (has(Objective::mlm)) {
      std::vector<TokenSequence> masked;
      std::vector<int> labels;
      for (const auto& t : tokens) {
        MaskedTokens m = apply_mlm_masking(t, cfg.mlm_mask_ratio, cfg.vocab_size, mask_rng);
        masked.push_back(std::move(m.input));
        labels.insert(labels.end(), m.labels.begin(), m.labels.end());
      }
      std::vector<int> rows;
      std::vector<int> row_labels;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != kIgnoreLabel) {
          rows.push_back(static_cast<int>(i));
          row_labels.push_back(labels[i]);
        }
      }
      if (!rows.empty()) {
        SequenceBatch mtxt = encode_texts(model_, tape, masked);
        FusedBatch fused = fuse(model_, tape, mtxt, visual_states, positives);
        ag::Var l = mlm_loss(mlm_logits(model_, tape, ag::gather_rows(fused.states, rows)), row_labels);
        out.mlm = l.value()(0, 0);
        terms.push_back(l);
      }
    }

    if (has(Objective::qa)) {
      std::vector<TokenSequence> questions;
      std::vector<std::vector<int>> answers;
      int dec_len = 2;
      for (int vi : batch) {
        const VideoExample& ex = data_[static_cast<std::size_t>(vi)];
        answers.push_back(answer_ids(tok_, ex.meta.at("answer")));
        dec_len = std::max(dec_len, static_cast<int>(answers.back().size()) + 1);
      }
      for (const auto& c : captions) questions.push_back(tok_.encode(c, cfg.max_text_len));
      dec_len = std::min(dec_len, cfg.max_text_len);
      std::vector<DecoderExample> examples;
      for (const auto& a : answers) examples.push_back(make_decoder_example(a, dec_len));
      SequenceBatch q = encode_texts(model_, tape, questions);
      FusedBatch fused = fuse(model_, tape, q, visual_states, positives);
      ag::Var l = qa_loss(model_, tape, fused, examples);
      out.qa = l.value()(0, 0);
      terms.push_back(l);
    }

    if (terms.empty()) throw ConfigError("no active objective");
    out.total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) out.total = ag::add(out.total, terms[i]);
    return out;
  }

  TrainResult run(const std::function<void(const StepRecord&)>& on_step) {
    const int n = static_cast<int>(data_.size());
    if (n == 0) throw InputError("training dataset is empty");
    const ScheduleConfig sched = make_schedule(opt_, n);
    const int per_epoch = (n + opt_.batch_size - 1) / opt_.batch_size;
    AdamW optim(sched, opt_.lr_scale);
    TrainResult result;

    std::ofstream log;
    if (!opt_.run_dir.empty()) {
      std::filesystem::create_directories(opt_.run_dir);
      log.open(opt_.run_dir / "metrics.jsonl");
      if (!log) throw std::runtime_error("cannot write metrics log in " + opt_.run_dir.string());
    }
    const bool with_qa = has(Objective::qa);

    int step = 0;
    for (int epoch = 0; epoch < opt_.epochs; ++epoch) {
      std::vector<int> order(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      Rng shuffle_rng = make_rng(opt_.seed, "order", static_cast<std::uint64_t>(epoch));
      for (int i = n - 1; i > 0; --i) {
        std::swap(order[static_cast<std::size_t>(i)],
                  order[uniform_index(shuffle_rng, static_cast<std::uint64_t>(i) + 1)]);
      }
      for (int b = 0; b < per_epoch; ++b, ++step) {
        std::vector<int> batch(order.begin() + b * opt_.batch_size,
                               order.begin() + std::min(n, (b + 1) * opt_.batch_size));
        // A contrastive batch of one has no negatives; borrow from the front.
        if (batch.size() < 2 && n >= 2) batch.push_back(order[0] == batch[0] ? order[1] : order[0]);

        const double lr = lr_at_step(step, sched);
        ag::Tape tape;
        StepLosses losses = forward(tape, batch, step);
        StepRecord rec{step, lr, losses.total.value()(0, 0), losses.vtc, losses.mlm, losses.vtm, losses.qa};
        if (!std::isfinite(rec.loss_total)) {
          if (log) {
            auto j = to_json(rec, with_qa);
            j["error"] = "non-finite loss";
            log << j.dump() << '\n';
          }
          throw DivergenceError("non-finite loss at step " + std::to_string(step));
        }
        tape.backward(losses.total);
        ParameterStore& params = model_.params();
        params.zero_grad();
        for (const auto& [p, g] : tape.parameter_grads()) params.get(p->name).grad += g;
        if (sched.clip_norm > 0.0) {
          const double norm = params.grad_norm();
          if (norm > sched.clip_norm) params.scale_grad(sched.clip_norm / norm);
        }
        optim.step(params, lr);

        result.log.push_back(rec);
        if (log) log << to_json(rec, with_qa).dump() << '\n';
        if (on_step) on_step(rec);
      }
      if (!opt_.run_dir.empty() && opt_.save_checkpoints) {
        const auto path = opt_.run_dir / ("ckpt_ep" + std::to_string(epoch + 1));
        save_checkpoint(path, model_, tok_);
        result.checkpoints.push_back(path);
      }
    }
    return result;
  }

 private:
  Model& model_;
  const Dataset& data_;
  const Tokenizer& tok_;
  const TrainOptions& opt_;
  std::set<Objective> objectives_;
  bool temporal_ = false;
};

}  // namespace

TrainResult run_training(Model& model, const Dataset& dataset, const Tokenizer& tokenizer,
                         const TrainOptions& options, const std::function<void(const StepRecord&)>& on_step) {
  if (dataset.empty()) throw InputError("training dataset is empty");
  Trainer trainer(model, dataset, tokenizer, options);
  return trainer.run(on_step);
}

}  // namespace oneframe
