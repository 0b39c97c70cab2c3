#pragma once

// Dense tensors, the handful of BLAS-like kernels the model needs, stable
// softmax / cross-entropy, and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "headline/errors.hpp"

namespace headline {

using TokenId = std::uint32_t;

/// Row-major dense array with an explicit shape.
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(extent(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(extent(shape_) == data_.size(), "Tensor: shape does not match data length");
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const {
    return shape_.size() < 2 ? 1 : data_.size() / std::max<std::size_t>(shape_[0], 1);
  }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const Real& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::size_t extent(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
      require(d > 0, "Tensor: extents must be positive");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

/// Matrix with zero columns is legal for disabled paths (e.g. no attention);
/// it carries shape {rows} and no data.
template <class Real>
Tensor<Real> make_matrix(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) return Tensor<Real>();
  return Tensor<Real>({rows, cols});
}

// ---------------------------------------------------------------- kernels

template <class Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// y += W x
template <class Real>
void gemv_acc(const Tensor<Real>& w, std::span<const Real> x, std::span<Real> y) {
  if (w.empty()) {
    require(x.empty() || y.empty(), "gemv: empty matrix with non-empty operands");
    return;
  }
  require(w.cols() == x.size() && w.rows() == y.size(), "gemv: dimension mismatch");
  const std::size_t n = x.size();
  const Real* p = w.values().data();
  for (std::size_t r = 0; r < y.size(); ++r, p += n) {
    Real s = 0;
    for (std::size_t c = 0; c < n; ++c) s += p[c] * x[c];
    y[r] += s;
  }
}

/// dx += W^T dy
template <class Real>
void gemv_t_acc(const Tensor<Real>& w, std::span<const Real> dy, std::span<Real> dx) {
  if (w.empty()) return;
  require(w.cols() == dx.size() && w.rows() == dy.size(), "gemv_t: dimension mismatch");
  const std::size_t n = dx.size();
  const Real* p = w.values().data();
  for (std::size_t r = 0; r < dy.size(); ++r, p += n) {
    const Real g = dy[r];
    if (g == Real(0)) continue;
    for (std::size_t c = 0; c < n; ++c) dx[c] += p[c] * g;
  }
}

/// dW += dy x^T
template <class Real>
void ger_acc(Tensor<Real>& dw, std::span<const Real> dy, std::span<const Real> x) {
  if (dw.empty()) return;
  require(dw.cols() == x.size() && dw.rows() == dy.size(), "ger: dimension mismatch");
  const std::size_t n = x.size();
  Real* p = dw.values().data();
  for (std::size_t r = 0; r < dy.size(); ++r, p += n) {
    const Real g = dy[r];
    if (g == Real(0)) continue;
    for (std::size_t c = 0; c < n; ++c) p[c] += g * x[c];
  }
}

template <class Real>
void axpy(Real a, std::span<const Real> x, std::span<Real> y) {
  require(x.size() == y.size(), "axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

template <class Real>
Real sigmoid(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

template <class Real>
void check_finite(std::span<const Real> v, const char* what) {
  for (Real x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

// ------------------------------------------------------- softmax & friends

template <class Real>
Real logsumexp(std::span<const Real> v) {
  require(!v.empty(), "logsumexp: empty input");
  check_finite(v, "logsumexp");
  const Real m = *std::max_element(v.begin(), v.end());
  Real s = 0;
  for (Real x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Max-subtracted softmax. Throws NumericError on non-finite logits.
template <class Real>
std::vector<Real> softmax(std::span<const Real> logits) {
  require(!logits.empty(), "softmax: empty input");
  check_finite(logits, "softmax");
  const Real m = *std::max_element(logits.begin(), logits.end());
  std::vector<Real> out(logits.size());
  Real s = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (auto& p : out) p /= s;
  return out;
}

template <class Real>
std::vector<Real> softmax(const std::vector<Real>& logits) {
  return softmax(std::span<const Real>(logits));
}

template <class Real>
std::vector<Real> log_softmax(std::span<const Real> logits) {
  const Real lse = logsumexp(logits);
  std::vector<Real> out(logits.begin(), logits.end());
  for (auto& x : out) x -= lse;
  return out;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// -ln(probs[target]) with the probability floored at 1e-12.
template <class Real>
Real cross_entropy(std::span<const Real> probs, std::size_t target) {
  require(target < probs.size(), "cross_entropy: target index out of range");
  const Real p = std::max<Real>(probs[target], Real(kProbabilityFloor));
  return -std::log(p);
}

template <class Real>
Real cross_entropy(const std::vector<Real>& probs, std::size_t target) {
  return cross_entropy(std::span<const Real>(probs), target);
}

/// First index of the maximum; ties resolve to the lowest index.
template <class Real>
std::size_t argmax(std::span<const Real> v) {
  require(!v.empty(), "argmax: empty input");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <class Real>
std::size_t argmax(const std::vector<Real>& v) {
  return argmax(std::span<const Real>(v));
}

// -------------------------------------------------------- gradient check

struct GradCheckReport {
  double max_relative_error = 0;
  std::size_t worst_parameter_index = 0;
  std::size_t num_checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-8);
}

/// Compares `analytic_grad()` against central differences of `loss_fn()`.
///
/// `loss_fn` reads the tensors in `params` in place; they are perturbed one
/// coordinate at a time and restored bit-exactly. `analytic_grad` returns one
/// tensor per entry of `params`, evaluated at the unperturbed point. With
/// `sample == 0` every coordinate is checked, otherwise a seeded uniform
/// sample of that many distinct coordinates. Coordinates are indexed in the
/// concatenation order of `params`. The difference quotient is formed in the
/// loss function's own return type, so a long double loss keeps its digits.
template <class LossFn, class GradFn>
GradCheckReport check_gradient(LossFn&& loss_fn, GradFn&& analytic_grad,
                               std::span<Tensor<double>* const> params, double epsilon = 1e-5,
                               std::size_t sample = 0, std::uint64_t seed = 0) {
  require(epsilon > 0, "check_gradient: epsilon must be positive");
  const auto base = loss_fn();
  if (loss_fn() != base) throw OracleViolation("check_gradient: loss function is not deterministic");

  const std::vector<Tensor<double>> grads = analytic_grad();
  require(grads.size() == params.size(), "check_gradient: gradient count mismatch");

  std::vector<std::size_t> offsets{0};
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(grads[k].size() == params[k]->size(), "check_gradient: gradient shape mismatch");
    offsets.push_back(offsets.back() + params[k]->size());
  }
  const std::size_t total = offsets.back();

  std::vector<std::size_t> coords(total);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (sample != 0 && sample < total) {
    std::vector<std::size_t> picked;
    std::mt19937_64 rng(seed);
    std::sample(coords.begin(), coords.end(), std::back_inserter(picked), sample, rng);
    coords = std::move(picked);
  }

  GradCheckReport report;
  for (std::size_t flat : coords) {
    const auto k = static_cast<std::size_t>(
        std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
    const std::size_t i = flat - offsets[k];
    double& w = (*params[k])[i];
    const double saved = w;
    w = saved + epsilon;
    const auto plus = loss_fn();
    w = saved - epsilon;
    const auto minus = loss_fn();
    w = saved;
    const double numeric = static_cast<double>((plus - minus) / (2 * epsilon));
    const double err = relative_error(grads[k][i], numeric);
    if (report.num_checked == 0 || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_parameter_index = flat;
    }
    ++report.num_checked;
  }
  return report;
}

}  // namespace headline
