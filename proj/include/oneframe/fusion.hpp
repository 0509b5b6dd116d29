#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oneframe/model.hpp"
#include "oneframe/rng.hpp"

namespace oneframe {

// concat is early fusion; lse, max and mean aggregate per-frame scores.
enum class EnsembleStrategy { concat, lse, max, mean };

std::string to_string(EnsembleStrategy s);
// Throws InputError on unknown names.
EnsembleStrategy parse_strategy(const std::string& name);
inline constexpr EnsembleStrategy kAllStrategies[] = {EnsembleStrategy::concat, EnsembleStrategy::lse,
                                                      EnsembleStrategy::max, EnsembleStrategy::mean};

// Uniform over [0, T).
int sample_train_frame(int frame_count, Rng& rng);
int sample_train_frame(int frame_count, std::uint64_t seed);

// Ordered multi-frame training sample: one uniform draw inside each of
// `count` equal segments of the video.
std::vector<int> sample_train_clip(int frame_count, int count, Rng& rng);

// indices[i] = floor((i + 0.5) * T / T_test).
std::vector<int> sample_inference_frames(int frame_count, int test_frames);

// mean, max, or log-mean-exp log((1/T) sum exp(p_i)). concat is rejected.
double aggregate_scores(std::span<const double> scores, EnsembleStrategy aggregator);

// Frame encodings concatenated into one key/value set, one fusion pass.
double predict_early_fusion(const Model& model, const EncodedSequence& text,
                            std::span<const EncodedSequence> frame_encodings);

// One fusion pass per frame, scores combined with `aggregator`.
double predict_late_fusion(const Model& model, const EncodedSequence& text,
                           std::span<const EncodedSequence> frame_encodings, EnsembleStrategy aggregator);

// Per-frame match logits, the inputs of late fusion.
std::vector<double> per_frame_scores(const Model& model, const EncodedSequence& text,
                                     std::span<const EncodedSequence> frame_encodings);

}  // namespace oneframe
