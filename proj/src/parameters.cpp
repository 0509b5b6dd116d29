#include "oneframe/parameters.hpp"

#include <cmath>
#include <numbers>

#include "oneframe/error.hpp"

namespace oneframe {

Parameter& ParameterStore::add(const std::string& name, Mat value, bool decay) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw ConfigError("duplicate parameter: " + name);
  Parameter& p = it->second;
  p.name = name;
  p.grad = Mat::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  p.decay = decay;
  return p;
}

bool ParameterStore::contains(const std::string& name) const { return params_.count(name) != 0; }

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.setZero();
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [_, p] : params_) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

void ParameterStore::scale_grad(double factor) {
  for (auto& [_, p] : params_) p.grad *= factor;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Mat truncated_normal(int rows, int cols, double stddev, Rng& rng) {
  Mat out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    double z;
    do {
      const double u1 = 1.0 - uniform01(rng);  // (0, 1]
      const double u2 = uniform01(rng);
      z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    } while (std::abs(z) > 2.0);
    out.data()[i] = z * stddev;
  }
  return out;
}

}  // namespace oneframe
