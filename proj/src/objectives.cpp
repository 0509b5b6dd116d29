#include "oneframe/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "oneframe/error.hpp"

namespace oneframe {

Mat contrastive_targets(std::span<const int> groups) {
  const auto n = static_cast<Eigen::Index>(groups.size());
  Mat y = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int members = 0;
    for (Eigen::Index j = 0; j < n; ++j) members += groups[static_cast<std::size_t>(j)] == groups[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) {
      if (groups[static_cast<std::size_t>(j)] == groups[static_cast<std::size_t>(i)]) y(i, j) = 1.0 / members;
    }
  }
  return y;
}

namespace {

Mat targets_for(Eigen::Index n, std::span<const int> groups) {
  if (groups.empty()) return Mat::Identity(n, n);
  if (static_cast<Eigen::Index>(groups.size()) != n) throw InputError("vtc_loss: one group per example required");
  return contrastive_targets(groups);
}

}  // namespace

ag::Var vtc_loss(const ag::Var& vision_proj, const ag::Var& text_proj, const ag::Var& temperature,
                 std::span<const int> groups) {
  if (vision_proj.rows() != text_proj.rows() || vision_proj.cols() != text_proj.cols()) {
    throw ConfigError("vtc_loss: projection shapes differ");
  }
  if (vision_proj.rows() < 1) throw InputError("vtc_loss: empty batch");
  if (!(temperature.value()(0, 0) > 0.0)) throw InputError("vtc_loss: temperature must be positive");
  const Mat y = targets_for(vision_proj.rows(), groups);
  ag::Var logits = ag::scale_by(ag::matmul_nt(vision_proj, text_proj), ag::reciprocal(temperature));
  ag::Var v2t = ag::soft_cross_entropy_sum(logits, y);
  ag::Var t2v = ag::soft_cross_entropy_sum(ag::transpose(logits), y.transpose());
  return ag::add(v2t, t2v);
}

double vtc_loss_value(const Mat& vision_proj, const Mat& text_proj, double temperature, std::span<const int> groups) {
  ag::Tape tape(false);
  Mat tau(1, 1);
  tau(0, 0) = temperature;
  return vtc_loss(tape.constant(vision_proj), tape.constant(text_proj), tape.constant(tau), groups).value()(0, 0);
}

MaskedTokens apply_mlm_masking(const TokenSequence& tokens, double ratio, int vocab_size, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InputError("mlm mask ratio must lie in (0, 1)");
  MaskedTokens out{tokens, std::vector<int>(tokens.ids.size(), kIgnoreLabel)};
  const int words = vocab_size - kFirstWord;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    if (!tokens.mask[i] || is_special_token(tokens.ids[i])) continue;
    // Draw all three numbers for every maskable position so the stream
    // advances identically regardless of outcomes.
    const double select = uniform01(rng);
    const double action = uniform01(rng);
    const std::uint64_t replacement = words > 0 ? uniform_index(rng, static_cast<std::uint64_t>(words)) : 0;
    if (select >= ratio) continue;
    out.labels[i] = tokens.ids[i];
    if (action < 0.8) {
      out.input.ids[i] = kMask;
    } else if (action < 0.9 && words > 0) {
      out.input.ids[i] = kFirstWord + static_cast<int>(replacement);
    }
  }
  return out;
}

MaskedTokens apply_mlm_masking(const TokenSequence& tokens, double ratio, int vocab_size, std::uint64_t seed) {
  Rng rng(mix_seed(seed));
  return apply_mlm_masking(tokens, ratio, vocab_size, rng);
}

ag::Var mlm_loss(const ag::Var& vocab_logits, const std::vector<int>& labels) {
  return ag::cross_entropy(vocab_logits, labels);
}

std::vector<double> hard_negative_distribution(std::span<const double> scores, double temperature,
                                               std::span<const unsigned char> eligible) {
  if (scores.size() != eligible.size()) throw InputError("hard_negative_distribution: size mismatch");
  if (!(temperature > 0.0)) throw InputError("hard_negative_distribution: temperature must be positive");
  std::vector<double> w(scores.size(), 0.0);
  double m = -HUGE_VAL;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (eligible[j]) m = std::max(m, scores[j] / temperature);
  }
  if (m == -HUGE_VAL) return w;
  double z = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (!eligible[j]) continue;
    w[j] = std::exp(scores[j] / temperature - m);
    z += w[j];
  }
  for (double& x : w) x /= z;
  return w;
}

namespace {

int draw(const std::vector<double>& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last = -1;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    acc += probs[j];
    last = static_cast<int>(j);
    if (u < acc) return last;
  }
  return last;
}

}  // namespace

HardNegatives sample_hard_negatives(const Mat& sim, double temperature, std::span<const int> groups, Rng& rng) {
  const auto n = static_cast<int>(sim.rows());
  if (sim.cols() != n) throw InputError("sample_hard_negatives: similarity must be square");
  if (n < 2) throw InputError("sample_hard_negatives: need at least two pairs for negatives");
  if (!groups.empty() && static_cast<int>(groups.size()) != n) throw InputError("sample_hard_negatives: group count");
  auto same = [&](int a, int b) {
    return a == b || (!groups.empty() && groups[static_cast<std::size_t>(a)] == groups[static_cast<std::size_t>(b)]);
  };
  HardNegatives out;
  out.video_for_text.resize(static_cast<std::size_t>(n));
  out.text_for_video.resize(static_cast<std::size_t>(n));
  std::vector<double> scores(static_cast<std::size_t>(n));
  std::vector<unsigned char> eligible(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    for (int v = 0; v < n; ++v) {
      scores[static_cast<std::size_t>(v)] = sim(v, t);
      eligible[static_cast<std::size_t>(v)] = !same(v, t);
    }
    out.video_for_text[static_cast<std::size_t>(t)] = draw(hard_negative_distribution(scores, temperature, eligible), rng);
  }
  for (int v = 0; v < n; ++v) {
    for (int t = 0; t < n; ++t) {
      scores[static_cast<std::size_t>(t)] = sim(v, t);
      eligible[static_cast<std::size_t>(t)] = !same(v, t);
    }
    out.text_for_video[static_cast<std::size_t>(v)] = draw(hard_negative_distribution(scores, temperature, eligible), rng);
  }
  return out;
}

std::vector<MatchPair> build_match_pairs(int n, const HardNegatives& negatives) {
  std::vector<MatchPair> pairs;
  pairs.reserve(static_cast<std::size_t>(3 * n));
  for (int i = 0; i < n; ++i) pairs.push_back({i, i, 1.0});
  for (int t = 0; t < n; ++t) {
    const int v = negatives.video_for_text[static_cast<std::size_t>(t)];
    if (v >= 0) pairs.push_back({t, v, 0.0});
  }
  for (int v = 0; v < n; ++v) {
    const int t = negatives.text_for_video[static_cast<std::size_t>(v)];
    if (t >= 0) pairs.push_back({t, v, 0.0});
  }
  return pairs;
}

ag::Var vtm_loss(const ag::Var& match_logits, const std::vector<MatchPair>& pairs) {
  std::vector<double> labels;
  labels.reserve(pairs.size());
  for (const auto& p : pairs) labels.push_back(p.label);
  return ag::bce_with_logits(match_logits, labels);
}

}  // namespace oneframe
