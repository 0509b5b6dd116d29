#include "oneframe/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oneframe/error.hpp"

namespace oneframe {

std::string to_string(EnsembleStrategy s) {
  switch (s) {
    case EnsembleStrategy::concat: return "concat";
    case EnsembleStrategy::lse: return "lse";
    case EnsembleStrategy::max: return "max";
    case EnsembleStrategy::mean: return "mean";
  }
  return "?";
}

EnsembleStrategy parse_strategy(const std::string& name) {
  for (EnsembleStrategy s : kAllStrategies) {
    if (to_string(s) == name) return s;
  }
  throw InputError("unknown ensemble strategy '" + name + "' (expected concat, lse, max or mean)");
}

int sample_train_frame(int frame_count, Rng& rng) {
  if (frame_count < 1) throw InputError("sample_train_frame: video has no frames");
  return static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(frame_count)));
}

int sample_train_frame(int frame_count, std::uint64_t seed) {
  Rng rng(mix_seed(seed));
  return sample_train_frame(frame_count, rng);
}

std::vector<int> sample_train_clip(int frame_count, int count, Rng& rng) {
  if (frame_count < 1 || count < 1) throw InputError("sample_train_clip: need frames and a positive count");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int lo = static_cast<int>(static_cast<long long>(i) * frame_count / count);
    int hi = static_cast<int>(static_cast<long long>(i + 1) * frame_count / count);
    if (hi <= lo) hi = lo + 1;
    hi = std::min(hi, frame_count);
    out.push_back(std::min(lo, frame_count - 1) +
                  static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(std::max(1, hi - lo)))));
  }
  return out;
}

std::vector<int> sample_inference_frames(int frame_count, int test_frames) {
  if (frame_count < 1 || test_frames < 1) throw InputError("sample_inference_frames: counts must be positive");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(test_frames));
  for (int i = 0; i < test_frames; ++i) {
    // (2i + 1) T / (2 T_test) in integers is exactly floor((i + 0.5) T / T_test).
    out.push_back(static_cast<int>((2LL * i + 1) * frame_count / (2LL * test_frames)));
  }
  return out;
}

double aggregate_scores(std::span<const double> scores, EnsembleStrategy aggregator) {
  if (scores.empty()) throw InputError("aggregate_scores: no scores");
  for (double s : scores) {
    if (!std::isfinite(s)) throw InputError("aggregate_scores: non-finite score");
  }
  const double n = static_cast<double>(scores.size());
  switch (aggregator) {
    case EnsembleStrategy::mean:
      return std::accumulate(scores.begin(), scores.end(), 0.0) / n;
    case EnsembleStrategy::max:
      return *std::max_element(scores.begin(), scores.end());
    case EnsembleStrategy::lse: {
      const double m = *std::max_element(scores.begin(), scores.end());
      double z = 0.0;
      for (double s : scores) z += std::exp(s - m);
      return m + std::log(z / n);
    }
    case EnsembleStrategy::concat:
      break;
  }
  throw InputError("aggregate_scores: concat is not a score aggregator");
}

double predict_early_fusion(const Model& model, const EncodedSequence& text,
                            std::span<const EncodedSequence> frame_encodings) {
  if (frame_encodings.empty()) throw InputError("predict_early_fusion: no frames");
  return multimodal_fuse(model, text, concat_sequences(frame_encodings)).match_logit;
}

std::vector<double> per_frame_scores(const Model& model, const EncodedSequence& text,
                                     std::span<const EncodedSequence> frame_encodings) {
  std::vector<double> out;
  out.reserve(frame_encodings.size());
  for (const auto& f : frame_encodings) out.push_back(multimodal_fuse(model, text, f).match_logit);
  return out;
}

double predict_late_fusion(const Model& model, const EncodedSequence& text,
                           std::span<const EncodedSequence> frame_encodings, EnsembleStrategy aggregator) {
  if (frame_encodings.empty()) throw InputError("predict_late_fusion: no frames");
  if (aggregator == EnsembleStrategy::concat) return predict_early_fusion(model, text, frame_encodings);
  const auto scores = per_frame_scores(model, text, frame_encodings);
  return aggregate_scores(scores, aggregator);
}

}  // namespace oneframe
