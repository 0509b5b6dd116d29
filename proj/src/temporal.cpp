#include "oneframe/temporal.hpp"

#include <cmath>

#include "oneframe/error.hpp"

namespace oneframe {

Mat interpolation_matrix(int train_frames, int test_frames) {
  if (train_frames < 1) throw InputError("temporal encoding has no rows");
  if (test_frames < 1) throw InputError("interpolation needs at least one output frame");
  Mat w = Mat::Zero(test_frames, train_frames);
  if (test_frames == train_frames) return Mat::Identity(test_frames, train_frames);
  if (test_frames == 1 || train_frames == 1) {
    w.col(0).setOnes();
    return w;
  }
  for (int i = 0; i < test_frames; ++i) {
    const double src = static_cast<double>(i) * (train_frames - 1) / (test_frames - 1);
    const int lo = std::min(static_cast<int>(std::floor(src)), train_frames - 1);
    const int hi = std::min(lo + 1, train_frames - 1);
    const double frac = src - lo;
    w(i, lo) += 1.0 - frac;
    if (frac > 0.0) w(i, hi) += frac;
  }
  return w;
}

Mat interpolate_temporal_encoding(const Mat& table, int test_frames) {
  return interpolation_matrix(static_cast<int>(table.rows()), test_frames) * table;
}

SequenceBatch temporal_encode(const Model& model, ag::Tape& tape, const SequenceBatch& frames, int videos,
                              int frames_per_video) {
  if (!model.has_temporal()) throw ConfigError("model has no temporal encoder");
  if (videos < 1 || frames_per_video < 1) throw InputError("temporal_encode: need at least one frame");
  if (frames.count != videos * frames_per_video) {
    throw InputError("temporal_encode: frame count does not match the temporal encoding length");
  }
  const auto& table = model.params().get("temporal.pos");
  ag::Var resampled = ag::matmul(
      tape.constant(interpolation_matrix(static_cast<int>(table.value.rows()), frames_per_video)),
      tape.parameter(table));
  const int len = frames.length;
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(frames.count * len));
  for (int b = 0; b < videos; ++b) {
    for (int t = 0; t < frames_per_video; ++t) {
      for (int l = 0; l < len; ++l) rows.push_back(t);
    }
  }
  ag::Var x = ag::add(frames.states, ag::gather_rows(resampled, std::move(rows)));
  const int seq = frames_per_video * len;
  auto layout = block_layout(videos, seq, {});
  for (int i = 0; i < model.config().temporal_layers; ++i) {
    x = transformer_layer(model, tape, "temporal.layers." + std::to_string(i), x, layout, nullptr, nullptr);
  }
  x = norm(model, tape, "temporal.ln_f", x);
  return SequenceBatch{x, videos, seq, std::vector<unsigned char>(static_cast<std::size_t>(videos * seq), 1)};
}

ag::Var temporal_pooled(ag::Tape& tape, const SequenceBatch& encoded, int frames_per_video, int frame_len) {
  std::vector<int> cls;
  cls.reserve(static_cast<std::size_t>(encoded.count * frames_per_video));
  for (int b = 0; b < encoded.count; ++b) {
    for (int t = 0; t < frames_per_video; ++t) cls.push_back(b * encoded.length + t * frame_len);
  }
  Mat avg = Mat::Zero(encoded.count, encoded.count * frames_per_video);
  for (int b = 0; b < encoded.count; ++b) {
    avg.block(b, b * frames_per_video, 1, frames_per_video).setConstant(1.0 / frames_per_video);
  }
  return ag::matmul(tape.constant(std::move(avg)), ag::gather_rows(encoded.states, std::move(cls)));
}

double predict_temporal(const Model& model, const EncodedSequence& text, std::span<const EncodedSequence> frames) {
  if (frames.empty()) throw InputError("predict_temporal: no frames");
  ag::Tape tape(false);
  const int len = frames.front().length();
  Mat stacked(static_cast<Eigen::Index>(frames.size()) * len, text.states.cols());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].length() != len) throw InputError("predict_temporal: frames differ in length");
    stacked.middleRows(static_cast<Eigen::Index>(i) * len, len) = frames[i].states;
  }
  const int count = static_cast<int>(frames.size());
  SequenceBatch frame_batch{tape.constant(std::move(stacked)), count, len,
                            std::vector<unsigned char>(static_cast<std::size_t>(count * len), 1)};
  SequenceBatch visual = temporal_encode(model, tape, frame_batch, 1, count);
  SequenceBatch t{tape.constant(text.states), 1, text.length(), text.mask};
  const FusePair pair{0, 0, visual.length};
  return fuse(model, tape, t, visual.states, std::span<const FusePair>(&pair, 1)).match_logits.value()(0, 0);
}

}  // namespace oneframe
