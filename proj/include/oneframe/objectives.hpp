#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "oneframe/autograd.hpp"
#include "oneframe/rng.hpp"
#include "oneframe/tokenizer.hpp"

namespace oneframe {

// ---- Vision-text contrastive -------------------------------------------------

// Soft targets for the similarity matrix. Row i spreads unit mass over every
// column whose group equals group i; distinct groups give the identity.
Mat contrastive_targets(std::span<const int> groups);

// Two-directional cross-entropy of s = vision_proj * text_proj^T scaled by
// 1 / temperature, summed over the batch (not divided by n). `groups` marks
// examples sharing a caption; empty means all distinct.
ag::Var vtc_loss(const ag::Var& vision_proj, const ag::Var& text_proj, const ag::Var& temperature,
                 std::span<const int> groups = {});

// Value-only form for fixed inputs.
double vtc_loss_value(const Mat& vision_proj, const Mat& text_proj, double temperature,
                      std::span<const int> groups = {});

// ---- Masked language modelling ------------------------------------------------

inline constexpr int kIgnoreLabel = -1;

struct MaskedTokens {
  TokenSequence input;
  // Original id at corrupted positions, kIgnoreLabel elsewhere.
  std::vector<int> labels;
};

// Each non-special valid position is selected with probability `ratio`;
// selected positions become [MASK] (80%), a random word (10%) or stay (10%).
MaskedTokens apply_mlm_masking(const TokenSequence& tokens, double ratio, int vocab_size, Rng& rng);
MaskedTokens apply_mlm_masking(const TokenSequence& tokens, double ratio, int vocab_size, std::uint64_t seed);

// Mean cross-entropy over labelled rows; 0 with no gradient when none are.
ag::Var mlm_loss(const ag::Var& vocab_logits, const std::vector<int>& labels);

// ---- Vision-text matching -----------------------------------------------------

// Sampling distribution over candidates: softmax of scores / temperature with
// the excluded candidates given zero mass. All zeros if nothing is eligible.
std::vector<double> hard_negative_distribution(std::span<const double> scores, double temperature,
                                               std::span<const unsigned char> eligible);

struct HardNegatives {
  // For text j, a video index (or -1 if no eligible negative).
  std::vector<int> video_for_text;
  // For video i, a text index (or -1).
  std::vector<int> text_for_video;
};

// sim(i, j) = similarity of video i and text j. Candidates sharing the
// anchor's group (its own index included) are never drawn. Throws for n < 2.
HardNegatives sample_hard_negatives(const Mat& sim, double temperature, std::span<const int> groups, Rng& rng);

struct MatchPair {
  int text = 0;
  int video = 0;
  double label = 0.0;
};

// n positives followed by the sampled negatives (video-for-text, then
// text-for-video), skipping anchors without an eligible negative.
std::vector<MatchPair> build_match_pairs(int n, const HardNegatives& negatives);

// Mean binary cross-entropy of match logits against pair labels.
ag::Var vtm_loss(const ag::Var& match_logits, const std::vector<MatchPair>& pairs);

}  // namespace oneframe
