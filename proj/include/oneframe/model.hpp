#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oneframe/autograd.hpp"
#include "oneframe/config.hpp"
#include "oneframe/parameters.hpp"
#include "oneframe/tokenizer.hpp"

namespace oneframe {

// H x W x C image, row-major with interleaved channels, values in [0, 1].
struct Frame {
  int size = 0;
  int channels = 0;
  std::vector<float> pixels;

  Frame() = default;
  Frame(int size_, int channels_) : size(size_), channels(channels_), pixels(static_cast<std::size_t>(size_ * size_ * channels_), 0.0f) {}

  float& at(int y, int x, int c) { return pixels[static_cast<std::size_t>((y * size + x) * channels + c)]; }
  float at(int y, int x, int c) const { return pixels[static_cast<std::size_t>((y * size + x) * channels + c)]; }
  bool operator==(const Frame&) const = default;
};

// Vision encoder, language encoder, multi-modal encoder and the contrastive
// heads, plus the optional temporal encoder and answer decoder. Holds weights
// only; every forward pass is a free function over a const Model.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t init_seed);

  // Adds the temporal encoder with a zero temporal position table.
  void enable_temporal(std::uint64_t init_seed);
  // Adds the answer decoder, copying the multi-modal encoder's weights into it.
  void enable_decoder();

  bool has_temporal() const { return params_.contains("temporal.pos"); }
  bool has_decoder() const { return params_.contains("dec.token_embed"); }

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // Empty store shell used by checkpoint loading.
  static Model empty(ModelConfig config);

 private:
  explicit Model(ModelConfig config);
  void add_layer(const std::string& prefix, bool cross, Rng& rng);
  void add_linear(const std::string& prefix, int in, int out, bool bias, Rng& rng);
  void add_norm(const std::string& prefix);

  ModelConfig config_;
  ParameterStore params_;
};

// ---------------------------------------------------------------------------
// Differentiable graph builders. Batches stack equal-length sequences along
// rows: sequence b occupies rows [b * length, (b + 1) * length).

struct SequenceBatch {
  ag::Var states;
  int count = 0;
  int length = 0;
  std::vector<unsigned char> valid;
};

SequenceBatch encode_frames(const Model& model, ag::Tape& tape, std::span<const Frame* const> frames);
SequenceBatch encode_texts(const Model& model, ag::Tape& tape, std::span<const TokenSequence> texts);

// Row 0 of every sequence (the CLS state): count x D.
ag::Var pooled_rows(const SequenceBatch& batch);

enum class Head { vision, text };

// Bias-free linear map to proj_dim followed by L2 normalisation (eps 1e-12).
ag::Var project(const Model& model, ag::Tape& tape, const ag::Var& pooled, Head head);

// Learned temperature, exp(log_temp) clamped to the configured range; 1 x 1.
ag::Var temperature(const Model& model, ag::Tape& tape);

// One multi-modal forward pass per pair: text sequence `text` of the batch
// attends over visual rows [visual_begin, visual_begin + visual_len).
struct FusePair {
  int text = 0;
  int visual_begin = 0;
  int visual_len = 0;
};

struct FusedBatch {
  ag::Var states;        // (pairs * length) x D
  ag::Var match_logits;  // pairs x 1
  int count = 0;
  int length = 0;
  std::vector<unsigned char> valid;
};

FusedBatch fuse(const Model& model, ag::Tape& tape, const SequenceBatch& texts, const ag::Var& visual,
                std::span<const FusePair> pairs);

// Vocabulary logits for selected rows of fused states.
ag::Var mlm_logits(const Model& model, ag::Tape& tape, const ag::Var& rows);

// Pre-norm transformer layer: self-attention, optional cross-attention over
// `memory`, feed-forward. Parameters live under `prefix`.
ag::Var transformer_layer(const Model& model, ag::Tape& tape, const std::string& prefix, const ag::Var& x,
                          const ag::LayoutPtr& self_layout, const ag::Var* memory, const ag::LayoutPtr& cross_layout);

ag::Var linear(const Model& model, ag::Tape& tape, const std::string& prefix, const ag::Var& x);
ag::Var norm(const Model& model, ag::Tape& tape, const std::string& prefix, const ag::Var& x);

// Self-attention layout for `count` stacked sequences of equal length.
ag::LayoutPtr block_layout(int count, int length, std::vector<unsigned char> key_valid, bool causal = false);

// ---------------------------------------------------------------------------
// Inference surface on single examples (no gradient tracking).

struct EncodedSequence {
  Mat states;
  std::vector<unsigned char> mask;

  Eigen::RowVectorXd pooled() const { return states.row(0); }
  int length() const { return static_cast<int>(states.rows()); }
};

struct FusedOutput {
  Mat states;
  double match_logit = 0.0;
};

// Frame shape must match the config, else ConfigError.
EncodedSequence encode_frame(const Model& model, const Frame& frame);
// Ids must be valid for the vocabulary, else InputError.
EncodedSequence encode_text(const Model& model, const TokenSequence& tokens);
// Visual tokens act only as an unordered key/value set.
FusedOutput multimodal_fuse(const Model& model, const EncodedSequence& text, const EncodedSequence& visual);
Eigen::RowVectorXd project_pool(const Model& model, const EncodedSequence& seq, Head head);

// Row-wise concatenation of several encodings into one key/value set.
EncodedSequence concat_sequences(std::span<const EncodedSequence> parts);

}  // namespace oneframe
