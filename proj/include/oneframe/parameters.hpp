#pragma once

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "oneframe/rng.hpp"

namespace oneframe {

using Mat = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  // Layer-norm gains/biases, linear biases and the temperature are exempt
  // from weight decay.
  bool decay = true;
};

// Named, ordered collection of trainable arrays. Iteration order is the
// lexicographic name order, which fixes the order of every reduction over
// parameters (gradient norms, checkpoint layout).
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Mat value, bool decay);
  bool contains(const std::string& name) const;
  const Parameter& get(const std::string& name) const;
  Parameter& get(const std::string& name);

  void zero_grad();
  double grad_norm() const;
  void scale_grad(double factor);
  std::size_t scalar_count() const;

  std::map<std::string, Parameter>& all() { return params_; }
  const std::map<std::string, Parameter>& all() const { return params_; }

 private:
  std::map<std::string, Parameter> params_;
};

// Truncated normal (cut at two standard deviations), Box-Muller based so the
// draws do not depend on the standard library's distribution code.
Mat truncated_normal(int rows, int cols, double stddev, Rng& rng);

}  // namespace oneframe
