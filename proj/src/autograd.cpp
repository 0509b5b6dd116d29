#include "oneframe/autograd.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "oneframe/error.hpp"

namespace oneframe::ag {

const Mat& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), nullptr, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), nullptr, grad_enabled_});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(const Parameter& p) {
  auto it = param_index_.find(&p);
  if (it != param_index_.end()) return Var(this, it->second);
  Var v = leaf(p.value);
  param_index_.emplace(&p, v.id());
  params_.emplace_back(&p, v.id());
  return v;
}

Mat Tape::grad(const Var& v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Mat& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool Tape::any_needs_grad(const Var* begin, const Var* end) const {
  if (!grad_enabled_) return false;
  for (const Var* v = begin; v != end; ++v) {
    if (v->tape() != this) throw InputError("variable recorded on a different tape");
    if (needs_grad(v->id())) return true;
  }
  return false;
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs, Backward backward) {
  const bool ng = any_needs_grad(inputs.begin(), inputs.end());
  nodes_.push_back(Node{std::move(value), Mat(), ng ? std::move(backward) : nullptr, ng});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Mat value, const std::vector<Var>& inputs, Backward backward) {
  const bool ng = any_needs_grad(inputs.data(), inputs.data() + inputs.size());
  nodes_.push_back(Node{std::move(value), Mat(), ng ? std::move(backward) : nullptr, ng});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& scalar) {
  if (scalar.tape() != this) throw InputError("backward on a variable from another tape");
  if (scalar.rows() != 1 || scalar.cols() != 1) throw InputError("backward needs a 1x1 value");
  if (!needs_grad(scalar.id())) return;
  grad_buffer(scalar.id())(0, 0) += 1.0;
  for (int id = scalar.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
  }
}

std::vector<std::pair<const Parameter*, Mat>> Tape::parameter_grads() const {
  std::vector<std::pair<const Parameter*, Mat>> out;
  out.reserve(params_.size());
  for (const auto& [p, id] : params_) out.emplace_back(p, grad(Var(const_cast<Tape*>(this), id)));
  return out;
}

namespace {

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw InputError("variables recorded on different tapes");
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch");
  }
}

void accumulate(Tape& t, const Var& v, const Mat& g) {
  if (t.needs_grad(v.id())) t.grad_buffer(v.id()) += g;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimension mismatch");
  Mat out = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a.id())) t.grad_buffer(a.id()).noalias() += g * b.value().transpose();
    if (t.needs_grad(b.id())) t.grad_buffer(b.id()).noalias() += a.value().transpose() * g;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.cols() != b.cols()) throw ConfigError("matmul_nt: inner dimension mismatch");
  Mat out = a.value() * b.value().transpose();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a.id())) t.grad_buffer(a.id()).noalias() += g * b.value();
    if (t.needs_grad(b.id())) t.grad_buffer(b.id()).noalias() += g.transpose() * a.value();
  });
}

Var add(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    accumulate(t, a, g);
    if (t.needs_grad(b.id())) t.grad_buffer(b.id()) -= g;
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a.id())) t.grad_buffer(a.id()) += g.cwiseProduct(b.value());
    if (t.needs_grad(b.id())) t.grad_buffer(b.id()) += g.cwiseProduct(a.value());
  });
}

Var scale(const Var& a, double factor) {
  return a.tape()->record(a.value() * factor, {a}, [a, factor](Tape& t, const Mat& g) {
    t.grad_buffer(a.id()) += g * factor;
  });
}

Var scale_by(const Var& a, const Var& s) {
  check_same_tape(a, s);
  if (s.rows() != 1 || s.cols() != 1) throw ConfigError("scale_by: scale must be 1x1");
  return a.tape()->record(a.value() * s.value()(0, 0), {a, s}, [a, s](Tape& t, const Mat& g) {
    if (t.needs_grad(a.id())) t.grad_buffer(a.id()) += g * s.value()(0, 0);
    if (t.needs_grad(s.id())) t.grad_buffer(s.id())(0, 0) += g.cwiseProduct(a.value()).sum();
  });
}

Var add_row(const Var& a, const Var& row) {
  check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ConfigError("add_row: row shape mismatch");
  Mat out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Mat& g) {
    accumulate(t, a, g);
    if (t.needs_grad(row.id())) t.grad_buffer(row.id()) += g.colwise().sum();
  });
}

Var gelu(const Var& a) {
  Mat out = a.value().unaryExpr([](double x) { return x * normal_cdf(x); });
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    Mat d = a.value().unaryExpr([](double x) { return normal_cdf(x) + x * normal_pdf(x); });
    t.grad_buffer(a.id()) += g.cwiseProduct(d);
  });
}

Var exp(const Var& a) {
  Mat out = a.value().array().exp().matrix();
  const int self = static_cast<int>(a.tape()->size());
  return a.tape()->record(std::move(out), {a}, [a, self](Tape& t, const Mat& g) {
    t.grad_buffer(a.id()) += g.cwiseProduct(t.value(self));
  });
}

Var reciprocal(const Var& a) {
  Mat out = a.value().cwiseInverse();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    t.grad_buffer(a.id()) -= g.cwiseQuotient(a.value().cwiseProduct(a.value()));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Mat out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape()->record(std::move(out), {a}, [a, lo, hi](Tape& t, const Mat& g) {
    Mat pass = a.value().unaryExpr([lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
    t.grad_buffer(a.id()) += g.cwiseProduct(pass);
  });
}

Var transpose(const Var& a) {
  return a.tape()->record(a.value().transpose(), {a}, [a](Tape& t, const Mat& g) {
    t.grad_buffer(a.id()) += g.transpose();
  });
}

Var sum(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    t.grad_buffer(a.id()).array() += g(0, 0);
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw InputError("mean of an empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  check_same_tape(x, gain);
  check_same_tape(x, bias);
  const Eigen::Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw ConfigError("layer_norm: gain/bias shape mismatch");
  }
  const Mat& xv = x.value();
  Eigen::VectorXd mu = xv.rowwise().mean();
  Mat centered = xv.colwise() - mu;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt().matrix();
  Mat xhat = centered.array().colwise() * inv_std.array();
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  auto saved = std::make_shared<std::pair<Mat, Eigen::VectorXd>>(std::move(xhat), std::move(inv_std));
  return x.tape()->record(std::move(out), {x, gain, bias}, [x, gain, bias, saved, d](Tape& t, const Mat& g) {
    const Mat& xh = saved->first;
    const Eigen::VectorXd& istd = saved->second;
    if (t.needs_grad(gain.id())) t.grad_buffer(gain.id()) += g.cwiseProduct(xh).colwise().sum();
    if (t.needs_grad(bias.id())) t.grad_buffer(bias.id()) += g.colwise().sum();
    if (t.needs_grad(x.id())) {
      Mat dxhat = g.array().rowwise() * gain.value().row(0).array();
      Eigen::VectorXd m1 = dxhat.rowwise().mean();
      Eigen::VectorXd m2 = dxhat.cwiseProduct(xh).rowwise().sum() / static_cast<double>(d);
      Mat dx = dxhat.colwise() - m1;
      dx -= (xh.array().colwise() * m2.array()).matrix();
      dx = dx.array().colwise() * istd.array();
      t.grad_buffer(x.id()) += dx;
    }
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  Eigen::VectorXd norms = a.value().rowwise().norm();
  Mat out = a.value().array().colwise() / (norms.array() + eps);
  return a.tape()->record(std::move(out), {a}, [a, norms, eps](Tape& t, const Mat& g) {
    const Mat& x = a.value();
    Mat dx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double n = norms(i);
      const double denom = n + eps;
      dx.row(i) = g.row(i) / denom;
      if (n > 0.0) {
        const double dot = x.row(i).dot(g.row(i));
        dx.row(i) -= x.row(i) * (dot / (n * denom * denom));
      }
    }
    t.grad_buffer(a.id()) += dx;
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("concat_rows: nothing to concatenate");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    check_same_tape(parts.front(), p);
    if (p.cols() != cols) throw ConfigError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape& t, const Mat& g) {
    Eigen::Index r = 0;
    for (const Var& p : parts) {
      if (t.needs_grad(p.id())) t.grad_buffer(p.id()) += g.middleRows(r, p.rows());
      r += p.rows();
    }
  });
}

Var slice_rows(const Var& a, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw InputError("slice_rows: out of range");
  Mat out = a.value().middleRows(begin, count);
  return a.tape()->record(std::move(out), {a}, [a, begin, count](Tape& t, const Mat& g) {
    t.grad_buffer(a.id()).middleRows(begin, count) += g;
  });
}

Var gather_rows(const Var& a, std::vector<int> rows) {
  const Mat& av = a.value();
  Mat out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows()) throw InputError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  }
  return a.tape()->record(std::move(out), {a}, [a, rows = std::move(rows)](Tape& t, const Mat& g) {
    Mat& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, LayoutPtr layout) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  const Eigen::Index d = q.cols();
  if (k.cols() != d || v.cols() != d) throw ConfigError("attention: q/k/v width mismatch");
  if (k.rows() != v.rows()) throw ConfigError("attention: k/v length mismatch");
  if (heads <= 0 || d % heads != 0) throw ConfigError("attention: width not divisible by heads");
  if (!layout->key_valid.empty() && static_cast<Eigen::Index>(layout->key_valid.size()) != k.rows()) {
    throw ConfigError("attention: key mask length mismatch");
  }
  const int dh = static_cast<int>(d / heads);
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mat& qv = q.value();
  const Mat& kv = k.value();
  const Mat& vv = v.value();
  Tape& tape = *q.tape();
  const bool keep = tape.grad_enabled() &&
                    (tape.needs_grad(q.id()) || tape.needs_grad(k.id()) || tape.needs_grad(v.id()));

  Mat out = Mat::Zero(qv.rows(), d);
  auto probs = std::make_shared<std::vector<Mat>>();
  if (keep) probs->reserve(layout->spans.size() * static_cast<std::size_t>(heads));
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();

  for (const AttentionSpan& s : layout->spans) {
    if (s.k_len <= 0) throw InputError("attention: span with no keys");
    if (s.q_begin < 0 || s.q_begin + s.q_len > qv.rows() || s.k_begin < 0 || s.k_begin + s.k_len > kv.rows()) {
      throw InputError("attention: span out of range");
    }
    if (layout->causal && s.q_len > s.k_len) throw ConfigError("attention: causal span needs q_len <= k_len");
    for (int h = 0; h < heads; ++h) {
      Mat scores = qv.block(s.q_begin, h * dh, s.q_len, dh) * kv.block(s.k_begin, h * dh, s.k_len, dh).transpose();
      scores *= scl;
      for (int i = 0; i < s.q_len; ++i) {
        double row_max = neg_inf;
        for (int j = 0; j < s.k_len; ++j) {
          const bool masked = (!layout->key_valid.empty() && !layout->key_valid[static_cast<std::size_t>(s.k_begin + j)]) ||
                              (layout->causal && j > i);
          if (masked) {
            scores(i, j) = neg_inf;
          } else {
            row_max = std::max(row_max, scores(i, j));
          }
        }
        if (row_max == neg_inf) throw InputError("attention: query row has no visible key");
        double z = 0.0;
        for (int j = 0; j < s.k_len; ++j) {
          const double e = scores(i, j) == neg_inf ? 0.0 : std::exp(scores(i, j) - row_max);
          scores(i, j) = e;
          z += e;
        }
        scores.row(i) /= z;
      }
      out.block(s.q_begin, h * dh, s.q_len, dh).noalias() += scores * vv.block(s.k_begin, h * dh, s.k_len, dh);
      if (keep) probs->push_back(std::move(scores));
    }
  }

  return tape.record(std::move(out), {q, k, v}, [q, k, v, heads, dh, scl, layout, probs](Tape& t, const Mat& g) {
    const bool gq = t.needs_grad(q.id());
    const bool gk = t.needs_grad(k.id());
    const bool gv = t.needs_grad(v.id());
    Mat* dq = gq ? &t.grad_buffer(q.id()) : nullptr;
    Mat* dk = gk ? &t.grad_buffer(k.id()) : nullptr;
    Mat* dv = gv ? &t.grad_buffer(v.id()) : nullptr;
    const Mat& qv = q.value();
    const Mat& kv = k.value();
    const Mat& vv = v.value();
    std::size_t idx = 0;
    for (const AttentionSpan& s : layout->spans) {
      for (int h = 0; h < heads; ++h, ++idx) {
        const Mat& p = (*probs)[idx];
        auto go = g.block(s.q_begin, h * dh, s.q_len, dh);
        if (gv) dv->block(s.k_begin, h * dh, s.k_len, dh).noalias() += p.transpose() * go;
        if (!gq && !gk) continue;
        Mat dp = go * vv.block(s.k_begin, h * dh, s.k_len, dh).transpose();
        Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
        Mat ds = p.cwiseProduct(dp.colwise() - row_dot) * scl;
        if (gq) dq->block(s.q_begin, h * dh, s.q_len, dh).noalias() += ds * kv.block(s.k_begin, h * dh, s.k_len, dh);
        if (gk) dk->block(s.k_begin, h * dh, s.k_len, dh).noalias() += ds.transpose() * qv.block(s.q_begin, h * dh, s.q_len, dh);
      }
    }
  });
}

namespace {

// Row-wise log-softmax.
Mat log_softmax_rows(const Mat& x) {
  Eigen::VectorXd m = x.rowwise().maxCoeff();
  Mat shifted = x.colwise() - m;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  return shifted.colwise() - lse;
}

}  // namespace

Var cross_entropy(const Var& logits, const std::vector<int>& targets) {
  const Mat& x = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != x.rows()) throw InputError("cross_entropy: target count mismatch");
  Mat logp = log_softmax_rows(x);
  int labelled = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0) continue;
    if (targets[i] >= x.cols()) throw InputError("cross_entropy: target outside vocabulary");
    total -= logp(static_cast<Eigen::Index>(i), targets[i]);
    ++labelled;
  }
  Mat out(1, 1);
  out(0, 0) = labelled > 0 ? total / labelled : 0.0;
  if (labelled == 0) return logits.tape()->constant(std::move(out));
  return logits.tape()->record(std::move(out), {logits}, [logits, targets, logp, labelled](Tape& t, const Mat& g) {
    Mat d = Mat::Zero(logp.rows(), logp.cols());
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (targets[i] < 0) continue;
      const auto r = static_cast<Eigen::Index>(i);
      d.row(r) = logp.row(r).array().exp().matrix();
      d(r, targets[i]) -= 1.0;
    }
    t.grad_buffer(logits.id()) += d * (g(0, 0) / labelled);
  });
}

Var soft_cross_entropy_sum(const Var& logits, const Mat& targets) {
  const Mat& x = logits.value();
  if (targets.rows() != x.rows() || targets.cols() != x.cols()) throw InputError("soft_cross_entropy: shape mismatch");
  Mat logp = log_softmax_rows(x);
  Mat out(1, 1);
  out(0, 0) = -targets.cwiseProduct(logp).sum();
  return logits.tape()->record(std::move(out), {logits}, [logits, targets, logp](Tape& t, const Mat& g) {
    Eigen::VectorXd mass = targets.rowwise().sum();
    Mat d = logp.array().exp().matrix();
    d = d.array().colwise() * mass.array();
    d -= targets;
    t.grad_buffer(logits.id()) += d * g(0, 0);
  });
}

Var bce_with_logits(const Var& logits, const std::vector<double>& targets) {
  const Mat& z = logits.value();
  if (z.cols() != 1 || static_cast<Eigen::Index>(targets.size()) != z.rows()) {
    throw InputError("bce_with_logits: expects n x 1 logits and n targets");
  }
  if (targets.empty()) throw InputError("bce_with_logits: empty batch");
  const double n = static_cast<double>(targets.size());
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double x = z(static_cast<Eigen::Index>(i), 0);
    // softplus(x) - y x, stable for large |x|
    total += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - targets[i] * x;
  }
  Mat out(1, 1);
  out(0, 0) = total / n;
  return logits.tape()->record(std::move(out), {logits}, [logits, targets, n](Tape& t, const Mat& g) {
    const Mat& zv = logits.value();
    Mat d(zv.rows(), 1);
    for (Eigen::Index i = 0; i < zv.rows(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-zv(i, 0)));
      d(i, 0) = (s - targets[static_cast<std::size_t>(i)]) * g(0, 0) / n;
    }
    t.grad_buffer(logits.id()) += d;
  });
}

}  // namespace oneframe::ag
