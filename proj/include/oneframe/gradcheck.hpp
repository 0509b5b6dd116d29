#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "oneframe/autograd.hpp"
#include "oneframe/config.hpp"
#include "oneframe/model.hpp"

namespace oneframe {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative errors use max(|analytic|, |numeric|, floor) as denominator.
  double floor = 1e-5;
  // Coordinates checked per parameter tensor; <= 0 checks every entry.
  int coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct TensorCheck {
  std::string parameter;
  double rel_error = 0.0;
  double grad_norm = 0.0;
};

struct LossCheck {
  std::string loss;
  double max_rel_error = 0.0;
  std::vector<TensorCheck> tensors;
};

struct GradcheckReport {
  std::vector<LossCheck> losses;
  double tolerance = 0.0;
  bool passed() const;
};

nlohmann::json to_json(const GradcheckReport& r);

// Scalar loss builder evaluated on a fresh tape for the current weights.
using LossBuilder = std::function<ag::Var(const Model&, ag::Tape&)>;

// Central differences against the tape's gradient for every parameter the
// loss touches.
LossCheck check_loss(Model& model, const std::string& name, const LossBuilder& build, const GradcheckOptions& opt);

// Small configuration used by the suite: D = 8, two heads, 8x8 frames.
ModelConfig gradcheck_config();

// VTC, MLM, VTM (fixed negatives), QA, temporal score and match logit on an
// n = 3 batch.
GradcheckReport run_gradcheck_suite(const ModelConfig& config, const GradcheckOptions& opt);

}  // namespace oneframe
