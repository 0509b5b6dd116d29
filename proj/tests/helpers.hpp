#pragma once

#include <functional>

#include "oneframe/autograd.hpp"
#include "oneframe/model.hpp"
#include "oneframe/tokenizer.hpp"

namespace testing {

using oneframe::Mat;

// Central-difference check of d f / d x for a scalar function built on a
// fresh tape from one leaf input. Returns the max relative error.
inline double leaf_grad_error(const Mat& x0, const std::function<oneframe::ag::Var(oneframe::ag::Tape&, const oneframe::ag::Var&)>& f,
                              double h = 1e-6) {
  oneframe::ag::Tape tape;
  auto x = tape.leaf(x0);
  auto y = f(tape, x);
  tape.backward(y);
  const Mat analytic = tape.grad(x);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Mat plus = x0, minus = x0;
    plus.data()[i] += h;
    minus.data()[i] -= h;
    oneframe::ag::Tape tp(false), tm(false);
    const double fp = f(tp, tp.leaf(plus)).value()(0, 0);
    const double fm = f(tm, tm.leaf(minus)).value()(0, 0);
    const double numeric = (fp - fm) / (2 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic.data()[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic.data()[i]) / denom);
  }
  return worst;
}

inline oneframe::ModelConfig small_config(int vocab) {
  oneframe::ModelConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.hidden_dim = 16;
  c.proj_dim = 8;
  c.heads = 2;
  c.vision_layers = 1;
  c.text_layers = 1;
  c.multimodal_layers = 1;
  c.temporal_layers = 1;
  c.mlp_ratio = 2;
  c.max_text_len = 8;
  c.vocab_size = vocab;
  return c;
}

inline oneframe::Frame random_frame(int size, oneframe::Rng& rng) {
  oneframe::Frame f(size, 3);
  for (float& v : f.pixels) v = static_cast<float>(oneframe::uniform01(rng));
  return f;
}

}  // namespace testing
