#include "oneframe/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "oneframe/error.hpp"
#include "oneframe/objectives.hpp"
#include "oneframe/qa.hpp"
#include "oneframe/temporal.hpp"

namespace oneframe {

bool GradcheckReport::passed() const {
  return std::all_of(losses.begin(), losses.end(), [&](const LossCheck& l) { return l.max_rel_error <= tolerance; });
}

nlohmann::json to_json(const GradcheckReport& r) {
  nlohmann::json losses = nlohmann::json::object();
  for (const auto& l : r.losses) {
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& t : l.tensors) tensors[t.parameter] = fixed_precision(t.rel_error);
    losses[l.loss] = {{"max_rel_error", fixed_precision(l.max_rel_error)}, {"tensors", tensors}};
  }
  return {{"tolerance", r.tolerance}, {"passed", r.passed()}, {"losses", losses}};
}

LossCheck check_loss(Model& model, const std::string& name, const LossBuilder& build, const GradcheckOptions& opt) {
  LossCheck out{name, 0.0, {}};
  std::map<std::string, Mat> analytic;
  {
    ag::Tape tape;
    ag::Var loss = build(model, tape);
    tape.backward(loss);
    for (const auto& [p, g] : tape.parameter_grads()) analytic[p->name] = g;
  }
  auto eval = [&]() {
    ag::Tape tape(false);
    return build(model, tape).value()(0, 0);
  };
  Rng rng = make_rng(opt.seed, "gradcheck", hash_label(name));
  for (auto& [pname, g] : analytic) {
    Parameter& p = model.params().get(pname);
    std::vector<Eigen::Index> coords;
    const Eigen::Index size = p.value.size();
    if (opt.coords_per_tensor <= 0 || size <= opt.coords_per_tensor) {
      for (Eigen::Index i = 0; i < size; ++i) coords.push_back(i);
    } else {
      while (static_cast<int>(coords.size()) < opt.coords_per_tensor) {
        const auto c = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(size)));
        if (std::find(coords.begin(), coords.end(), c) == coords.end()) coords.push_back(c);
      }
    }
    Eigen::VectorXd a(static_cast<Eigen::Index>(coords.size()));
    Eigen::VectorXd n(static_cast<Eigen::Index>(coords.size()));
    for (std::size_t k = 0; k < coords.size(); ++k) {
      double& w = p.value.data()[coords[k]];
      const double orig = w;
      w = orig + opt.step;
      const double up = eval();
      w = orig - opt.step;
      const double down = eval();
      w = orig;
      n(static_cast<Eigen::Index>(k)) = (up - down) / (2.0 * opt.step);
      a(static_cast<Eigen::Index>(k)) = g.data()[coords[k]];
    }
    const double denom = std::max({a.norm(), n.norm(), opt.floor});
    const double rel = (a - n).norm() / denom;
    out.tensors.push_back({pname, rel, a.norm()});
    out.max_rel_error = std::max(out.max_rel_error, rel);
  }
  return out;
}

ModelConfig gradcheck_config() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.hidden_dim = 8;
  c.proj_dim = 4;
  c.vision_layers = 1;
  c.text_layers = 1;
  c.multimodal_layers = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.vocab_size = 12;
  c.max_text_len = 6;
  c.temporal_layers = 1;
  c.temporal_train_frames = 2;
  // Larger weights keep every nonlinearity away from its linear regime.
  c.init_std = 0.5;
  c.temperature_init = 0.5;
  return c;
}

GradcheckReport run_gradcheck_suite(const ModelConfig& config, const GradcheckOptions& opt) {
  constexpr int n = 3;
  Model model(config, opt.seed);
  model.enable_temporal(opt.seed);
  model.enable_decoder();
  // The zero temporal table would hide errors in its own gradient path.
  Rng rng = make_rng(opt.seed, "gradcheck-inputs");
  model.params().get("temporal.pos").value = truncated_normal(config.temporal_train_frames, config.hidden_dim, 0.5, rng);

  const int frames_per_video = config.temporal_train_frames;
  std::vector<Frame> frames;
  for (int i = 0; i < n * frames_per_video; ++i) {
    Frame f(config.image_size, config.channels);
    for (auto& px : f.pixels) px = static_cast<float>(uniform01(rng));
    frames.push_back(std::move(f));
  }
  std::vector<const Frame*> first_frames;
  std::vector<const Frame*> all_frames;
  for (int i = 0; i < n; ++i) first_frames.push_back(&frames[static_cast<std::size_t>(i * frames_per_video)]);
  for (const auto& f : frames) all_frames.push_back(&f);

  const int len = config.max_text_len;
  std::vector<TokenSequence> texts;
  for (int i = 0; i < n; ++i) {
    TokenSequence t;
    const int words = 2 + i % (len - 3);
    t.ids.push_back(kCls);
    for (int w = 0; w < words; ++w) {
      t.ids.push_back(kFirstWord + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(config.vocab_size - kFirstWord))));
    }
    t.ids.push_back(kSep);
    t.mask.assign(t.ids.size(), 1);
    t.ids.resize(static_cast<std::size_t>(len), kPad);
    t.mask.resize(static_cast<std::size_t>(len), 0);
    texts.push_back(std::move(t));
  }
  std::vector<TokenSequence> masked = texts;
  std::vector<int> labels(static_cast<std::size_t>(n * len), kIgnoreLabel);
  for (int i = 0; i < n; ++i) {
    // Two corrupted positions per text, as fixed labels.
    for (int pos : {1, 2}) {
      labels[static_cast<std::size_t>(i * len + pos)] = texts[static_cast<std::size_t>(i)].ids[static_cast<std::size_t>(pos)];
      masked[static_cast<std::size_t>(i)].ids[static_cast<std::size_t>(pos)] = pos == 1 ? kMask : kFirstWord;
    }
  }
  std::vector<int> label_rows;
  std::vector<int> row_labels;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] != kIgnoreLabel) {
      label_rows.push_back(static_cast<int>(r));
      row_labels.push_back(labels[r]);
    }
  }
  const int lv = config.vision_len();
  std::vector<FusePair> positives;
  for (int i = 0; i < n; ++i) positives.push_back({i, i * lv, lv});
  const HardNegatives negatives{{1, 2, 0}, {2, 0, 1}};
  const auto match_pairs = build_match_pairs(n, negatives);
  std::vector<FusePair> vtm_pairs;
  for (const auto& p : match_pairs) vtm_pairs.push_back({p.text, p.video * lv, lv});
  std::vector<DecoderExample> answers;
  for (int i = 0; i < n; ++i) answers.push_back(make_decoder_example({kFirstWord + i, kFirstWord + 2 * i}, 4));

  GradcheckReport report;
  report.tolerance = opt.tolerance;
  report.losses.push_back(check_loss(model, "vtc", [&](const Model& m, ag::Tape& tape) {
    SequenceBatch v = encode_frames(m, tape, first_frames);
    SequenceBatch t = encode_texts(m, tape, texts);
    return vtc_loss(project(m, tape, pooled_rows(v), Head::vision), project(m, tape, pooled_rows(t), Head::text),
                    temperature(m, tape));
  }, opt));
  report.losses.push_back(check_loss(model, "mlm", [&](const Model& m, ag::Tape& tape) {
    SequenceBatch v = encode_frames(m, tape, first_frames);
    SequenceBatch t = encode_texts(m, tape, masked);
    FusedBatch f = fuse(m, tape, t, v.states, positives);
    return mlm_loss(mlm_logits(m, tape, ag::gather_rows(f.states, label_rows)), row_labels);
  }, opt));
  report.losses.push_back(check_loss(model, "vtm", [&](const Model& m, ag::Tape& tape) {
    SequenceBatch v = encode_frames(m, tape, first_frames);
    SequenceBatch t = encode_texts(m, tape, texts);
    return vtm_loss(fuse(m, tape, t, v.states, vtm_pairs).match_logits, match_pairs);
  }, opt));
  report.losses.push_back(check_loss(model, "qa", [&](const Model& m, ag::Tape& tape) {
    SequenceBatch v = encode_frames(m, tape, first_frames);
    SequenceBatch t = encode_texts(m, tape, texts);
    return qa_loss(m, tape, fuse(m, tape, t, v.states, positives), answers);
  }, opt));
  report.losses.push_back(check_loss(model, "temporal_score", [&](const Model& m, ag::Tape& tape) {
    SequenceBatch v = encode_frames(m, tape, all_frames);
    SequenceBatch enc = temporal_encode(m, tape, v, n, frames_per_video);
    SequenceBatch t = encode_texts(m, tape, texts);
    std::vector<FusePair> pairs;
    for (int i = 0; i < n; ++i) pairs.push_back({i, i * enc.length, enc.length});
    return ag::sum(fuse(m, tape, t, enc.states, pairs).match_logits);
  }, opt));
  report.losses.push_back(check_loss(model, "match_logit", [&](const Model& m, ag::Tape& tape) {
    SequenceBatch v = encode_frames(m, tape, first_frames);
    SequenceBatch t = encode_texts(m, tape, texts);
    const FusePair one{0, 0, lv};
    return ag::sum(fuse(m, tape, t, v.states, std::span<const FusePair>(&one, 1)).match_logits);
  }, opt));
  return report;
}

}  // namespace oneframe
