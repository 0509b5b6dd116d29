#include "oneframe/model.hpp"

#include <cmath>

#include "oneframe/error.hpp"

namespace oneframe {

namespace {

std::string layer_prefix(const char* stack, int i) { return std::string(stack) + ".layers." + std::to_string(i); }

}  // namespace

Model::Model(ModelConfig config) : config_(config) { config_.validate(); }

Model Model::empty(ModelConfig config) { return Model(config); }

Model::Model(ModelConfig config, std::uint64_t init_seed) : Model(config) {
  Rng rng = make_rng(init_seed, "init");
  const int d = config_.hidden_dim;
  const double sd = config_.init_std;

  add_linear("vision.patch_embed", config_.patch_dim(), d, true, rng);
  params_.add("vision.cls", truncated_normal(1, d, sd, rng), true);
  params_.add("vision.pos", truncated_normal(config_.vision_len(), d, sd, rng), true);
  for (int i = 0; i < config_.vision_layers; ++i) add_layer(layer_prefix("vision", i), false, rng);
  add_norm("vision.ln_f");

  params_.add("text.token_embed", truncated_normal(config_.vocab_size, d, sd, rng), true);
  params_.add("text.pos", truncated_normal(config_.max_text_len, d, sd, rng), true);
  for (int i = 0; i < config_.text_layers; ++i) add_layer(layer_prefix("text", i), false, rng);
  add_norm("text.ln_f");

  add_linear("vision_proj", d, config_.proj_dim, false, rng);
  add_linear("text_proj", d, config_.proj_dim, false, rng);
  Mat log_temp(1, 1);
  log_temp(0, 0) = std::log(config_.temperature_init);
  params_.add("log_temp", log_temp, false);

  for (int i = 0; i < config_.multimodal_layers; ++i) add_layer(layer_prefix("mm", i), true, rng);
  add_norm("mm.ln_f");
  add_linear("mm.itm", d, 1, true, rng);

  add_linear("mlm.dense", d, d, true, rng);
  add_norm("mlm.ln");
  add_linear("mlm.decoder", d, config_.vocab_size, true, rng);
}

void Model::add_linear(const std::string& prefix, int in, int out, bool bias, Rng& rng) {
  params_.add(prefix + ".weight", truncated_normal(in, out, config_.init_std, rng), true);
  if (bias) params_.add(prefix + ".bias", Mat::Zero(1, out), false);
}

void Model::add_norm(const std::string& prefix) {
  params_.add(prefix + ".gain", Mat::Ones(1, config_.hidden_dim), false);
  params_.add(prefix + ".bias", Mat::Zero(1, config_.hidden_dim), false);
}

void Model::add_layer(const std::string& prefix, bool cross, Rng& rng) {
  const int d = config_.hidden_dim;
  add_norm(prefix + ".ln1");
  for (const char* p : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) add_linear(prefix + p, d, d, true, rng);
  if (cross) {
    add_norm(prefix + ".ln2");
    for (const char* p : {".xattn.q", ".xattn.k", ".xattn.v", ".xattn.o"}) add_linear(prefix + p, d, d, true, rng);
  }
  add_norm(prefix + ".ln3");
  add_linear(prefix + ".ffn.fc1", d, d * config_.mlp_ratio, true, rng);
  add_linear(prefix + ".ffn.fc2", d * config_.mlp_ratio, d, true, rng);
}

void Model::enable_temporal(std::uint64_t init_seed) {
  if (has_temporal()) return;
  Rng rng = make_rng(init_seed, "init-temporal");
  params_.add("temporal.pos", Mat::Zero(config_.temporal_train_frames, config_.hidden_dim), true);
  for (int i = 0; i < config_.temporal_layers; ++i) add_layer(layer_prefix("temporal", i), false, rng);
  add_norm("temporal.ln_f");
}

void Model::enable_decoder() {
  if (has_decoder()) return;
  // Collect first: inserting while iterating the map would visit new keys.
  std::vector<std::pair<std::string, const Parameter*>> sources;
  for (const auto& [name, p] : params_.all()) {
    std::string target;
    if (name.rfind("mm.", 0) == 0 && name.rfind("mm.itm", 0) != 0) target = "dec." + name.substr(3);
    else if (name.rfind("mlm.", 0) == 0) target = "dec.lm." + name.substr(4);
    else if (name == "text.token_embed") target = "dec.token_embed";
    else if (name == "text.pos") target = "dec.pos";
    if (!target.empty()) sources.emplace_back(std::move(target), &p);
  }
  for (const auto& [target, src] : sources) params_.add(target, src->value, src->decay);
}

// ---------------------------------------------------------------------------

ag::Var linear(const Model& model, ag::Tape& tape, const std::string& prefix, const ag::Var& x) {
  const auto& ps = model.params();
  ag::Var y = ag::matmul(x, tape.parameter(ps.get(prefix + ".weight")));
  const std::string bias = prefix + ".bias";
  if (ps.contains(bias)) y = ag::add_row(y, tape.parameter(ps.get(bias)));
  return y;
}

ag::Var norm(const Model& model, ag::Tape& tape, const std::string& prefix, const ag::Var& x) {
  const auto& ps = model.params();
  return ag::layer_norm(x, tape.parameter(ps.get(prefix + ".gain")), tape.parameter(ps.get(prefix + ".bias")),
                        model.config().layer_norm_eps);
}

ag::LayoutPtr block_layout(int count, int length, std::vector<unsigned char> key_valid, bool causal) {
  auto layout = std::make_shared<ag::AttentionLayout>();
  layout->spans.reserve(static_cast<std::size_t>(count));
  for (int b = 0; b < count; ++b) layout->spans.push_back({b * length, length, b * length, length});
  layout->key_valid = std::move(key_valid);
  layout->causal = causal;
  return layout;
}

ag::Var transformer_layer(const Model& model, ag::Tape& tape, const std::string& prefix, const ag::Var& x,
                          const ag::LayoutPtr& self_layout, const ag::Var* memory, const ag::LayoutPtr& cross_layout) {
  const int heads = model.config().heads;
  ag::Var h = norm(model, tape, prefix + ".ln1", x);
  ag::Var a = ag::attention(linear(model, tape, prefix + ".attn.q", h), linear(model, tape, prefix + ".attn.k", h),
                            linear(model, tape, prefix + ".attn.v", h), heads, self_layout);
  ag::Var out = ag::add(x, linear(model, tape, prefix + ".attn.o", a));
  if (memory != nullptr) {
    h = norm(model, tape, prefix + ".ln2", out);
    a = ag::attention(linear(model, tape, prefix + ".xattn.q", h), linear(model, tape, prefix + ".xattn.k", *memory),
                      linear(model, tape, prefix + ".xattn.v", *memory), heads, cross_layout);
    out = ag::add(out, linear(model, tape, prefix + ".xattn.o", a));
  }
  h = norm(model, tape, prefix + ".ln3", out);
  ag::Var f = linear(model, tape, prefix + ".ffn.fc2", ag::gelu(linear(model, tape, prefix + ".ffn.fc1", h)));
  return ag::add(out, f);
}

SequenceBatch encode_frames(const Model& model, ag::Tape& tape, std::span<const Frame* const> frames) {
  const ModelConfig& cfg = model.config();
  if (frames.empty()) throw InputError("encode_frames: no frames");
  const int b_count = static_cast<int>(frames.size());
  const int np = cfg.num_patches();
  const int side = cfg.patches_per_side();
  const int ps = cfg.patch_size;
  const int len = cfg.vision_len();

  Mat patches(static_cast<Eigen::Index>(b_count) * np, cfg.patch_dim());
  for (int b = 0; b < b_count; ++b) {
    const Frame& f = *frames[static_cast<std::size_t>(b)];
    if (f.size != cfg.image_size || f.channels != cfg.channels ||
        f.pixels.size() != static_cast<std::size_t>(cfg.image_size * cfg.image_size * cfg.channels)) {
      throw ConfigError("frame shape does not match the model configuration");
    }
    for (int py = 0; py < side; ++py) {
      for (int px = 0; px < side; ++px) {
        const Eigen::Index row = static_cast<Eigen::Index>(b) * np + py * side + px;
        Eigen::Index col = 0;
        for (int dy = 0; dy < ps; ++dy) {
          for (int dx = 0; dx < ps; ++dx) {
            for (int c = 0; c < cfg.channels; ++c) patches(row, col++) = f.at(py * ps + dy, px * ps + dx, c);
          }
        }
      }
    }
  }

  const auto& P = model.params();
  ag::Var embedded = linear(model, tape, "vision.patch_embed", tape.constant(std::move(patches)));
  ag::Var with_cls = ag::concat_rows({tape.parameter(P.get("vision.cls")), embedded});
  std::vector<int> token_rows;
  std::vector<int> pos_rows;
  token_rows.reserve(static_cast<std::size_t>(b_count * len));
  pos_rows.reserve(static_cast<std::size_t>(b_count * len));
  for (int b = 0; b < b_count; ++b) {
    token_rows.push_back(0);
    pos_rows.push_back(0);
    for (int p = 0; p < np; ++p) {
      token_rows.push_back(1 + b * np + p);
      pos_rows.push_back(1 + p);
    }
  }
  ag::Var x = ag::add(ag::gather_rows(with_cls, std::move(token_rows)),
                      ag::gather_rows(tape.parameter(P.get("vision.pos")), std::move(pos_rows)));
  auto layout = block_layout(b_count, len, {});
  for (int i = 0; i < cfg.vision_layers; ++i) {
    x = transformer_layer(model, tape, layer_prefix("vision", i), x, layout, nullptr, nullptr);
  }
  x = norm(model, tape, "vision.ln_f", x);
  return SequenceBatch{x, b_count, len, std::vector<unsigned char>(static_cast<std::size_t>(b_count * len), 1)};
}

SequenceBatch encode_texts(const Model& model, ag::Tape& tape, std::span<const TokenSequence> texts) {
  const ModelConfig& cfg = model.config();
  if (texts.empty()) throw InputError("encode_texts: no texts");
  const int len = cfg.max_text_len;
  std::vector<int> ids;
  std::vector<int> positions;
  std::vector<unsigned char> valid;
  for (const TokenSequence& t : texts) {
    validate_tokens(t, cfg.vocab_size);
    if (static_cast<int>(t.ids.size()) != len) throw InputError("token sequence length must equal max_text_len");
    ids.insert(ids.end(), t.ids.begin(), t.ids.end());
    valid.insert(valid.end(), t.mask.begin(), t.mask.end());
    for (int i = 0; i < len; ++i) positions.push_back(i);
  }
  const auto& P = model.params();
  ag::Var x = ag::add(ag::gather_rows(tape.parameter(P.get("text.token_embed")), std::move(ids)),
                      ag::gather_rows(tape.parameter(P.get("text.pos")), std::move(positions)));
  const int count = static_cast<int>(texts.size());
  auto layout = block_layout(count, len, valid);
  for (int i = 0; i < cfg.text_layers; ++i) {
    x = transformer_layer(model, tape, layer_prefix("text", i), x, layout, nullptr, nullptr);
  }
  x = norm(model, tape, "text.ln_f", x);
  return SequenceBatch{x, count, len, std::move(valid)};
}

ag::Var pooled_rows(const SequenceBatch& batch) {
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(batch.count));
  for (int b = 0; b < batch.count; ++b) rows.push_back(b * batch.length);
  return ag::gather_rows(batch.states, std::move(rows));
}

ag::Var project(const Model& model, ag::Tape& tape, const ag::Var& pooled, Head head) {
  const char* name = head == Head::vision ? "vision_proj" : "text_proj";
  return ag::l2_normalize_rows(linear(model, tape, name, pooled), 1e-12);
}

ag::Var temperature(const Model& model, ag::Tape& tape) {
  const ModelConfig& cfg = model.config();
  return ag::clamp(ag::exp(tape.parameter(model.params().get("log_temp"))), cfg.temperature_min, cfg.temperature_max);
}

FusedBatch fuse(const Model& model, ag::Tape& tape, const SequenceBatch& texts, const ag::Var& visual,
                std::span<const FusePair> pairs) {
  const ModelConfig& cfg = model.config();
  if (pairs.empty()) throw InputError("fuse: no pairs");
  if (visual.cols() != texts.states.cols()) throw ConfigError("fuse: text and visual widths differ");
  const int len = texts.length;
  const int count = static_cast<int>(pairs.size());

  std::vector<int> rows;
  std::vector<unsigned char> valid;
  rows.reserve(static_cast<std::size_t>(count * len));
  auto cross = std::make_shared<ag::AttentionLayout>();
  cross->spans.reserve(pairs.size());
  for (int p = 0; p < count; ++p) {
    const FusePair& fp = pairs[static_cast<std::size_t>(p)];
    if (fp.text < 0 || fp.text >= texts.count) throw InputError("fuse: text index out of range");
    if (fp.visual_len <= 0) throw InputError("fuse: empty visual key/value set");
    if (fp.visual_begin < 0 || fp.visual_begin + fp.visual_len > visual.rows()) {
      throw InputError("fuse: visual span out of range");
    }
    for (int i = 0; i < len; ++i) {
      rows.push_back(fp.text * len + i);
      valid.push_back(texts.valid[static_cast<std::size_t>(fp.text * len + i)]);
    }
    cross->spans.push_back({p * len, len, fp.visual_begin, fp.visual_len});
  }
  ag::Var x = ag::gather_rows(texts.states, std::move(rows));
  auto self_layout = block_layout(count, len, valid);
  for (int i = 0; i < cfg.multimodal_layers; ++i) {
    x = transformer_layer(model, tape, layer_prefix("mm", i), x, self_layout, &visual, cross);
  }
  x = norm(model, tape, "mm.ln_f", x);
  std::vector<int> cls_rows;
  for (int p = 0; p < count; ++p) cls_rows.push_back(p * len);
  ag::Var logits = linear(model, tape, "mm.itm", ag::gather_rows(x, std::move(cls_rows)));
  return FusedBatch{x, logits, count, len, std::move(valid)};
}

ag::Var mlm_logits(const Model& model, ag::Tape& tape, const ag::Var& rows) {
  ag::Var h = ag::gelu(linear(model, tape, "mlm.dense", rows));
  h = norm(model, tape, "mlm.ln", h);
  return linear(model, tape, "mlm.decoder", h);
}

// ---------------------------------------------------------------------------

EncodedSequence encode_frame(const Model& model, const Frame& frame) {
  ag::Tape tape(false);
  const Frame* ptr = &frame;
  SequenceBatch b = encode_frames(model, tape, std::span<const Frame* const>(&ptr, 1));
  return EncodedSequence{b.states.value(), std::move(b.valid)};
}

EncodedSequence encode_text(const Model& model, const TokenSequence& tokens) {
  ag::Tape tape(false);
  SequenceBatch b = encode_texts(model, tape, std::span<const TokenSequence>(&tokens, 1));
  return EncodedSequence{b.states.value(), std::move(b.valid)};
}

FusedOutput multimodal_fuse(const Model& model, const EncodedSequence& text, const EncodedSequence& visual) {
  if (text.states.cols() != visual.states.cols() || text.states.cols() != model.config().hidden_dim) {
    throw ConfigError("multimodal_fuse: hidden sizes differ");
  }
  if (visual.states.rows() == 0) throw InputError("multimodal_fuse: visual input has no tokens");
  if (text.states.rows() == 0) throw InputError("multimodal_fuse: text input has no tokens");
  ag::Tape tape(false);
  SequenceBatch t{tape.constant(text.states), 1, text.length(), text.mask};
  ag::Var v = tape.constant(visual.states);
  const FusePair pair{0, 0, visual.length()};
  FusedBatch out = fuse(model, tape, t, v, std::span<const FusePair>(&pair, 1));
  return FusedOutput{out.states.value(), out.match_logits.value()(0, 0)};
}

Eigen::RowVectorXd project_pool(const Model& model, const EncodedSequence& seq, Head head) {
  if (seq.states.rows() == 0) throw InputError("project_pool: empty sequence");
  ag::Tape tape(false);
  ag::Var pooled = tape.constant(seq.states.topRows(1));
  return project(model, tape, pooled, head).value().row(0);
}

EncodedSequence concat_sequences(std::span<const EncodedSequence> parts) {
  if (parts.empty()) throw InputError("concat_sequences: nothing to concatenate");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.states.cols() != parts.front().states.cols()) throw ConfigError("concat_sequences: width mismatch");
    rows += p.states.rows();
  }
  EncodedSequence out;
  out.states.resize(rows, parts.front().states.cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.states.middleRows(r, p.states.rows()) = p.states;
    out.mask.insert(out.mask.end(), p.mask.begin(), p.mask.end());
    r += p.states.rows();
  }
  return out;
}

}  // namespace oneframe
