#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ibts/util/hash.hpp"
#include "ibts/util/rng.hpp"

namespace ibts::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
};

using ParamRefs = std::vector<Parameter*>;
using ConstParamRefs = std::vector<const Parameter*>;

inline void zero_grad(const ParamRefs& params) {
  for (auto* p : params) p->grad.setZero();
}

inline double grad_norm(const ParamRefs& params) {
  double sq = 0.0;
  for (auto* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

// Rescales gradients so their global L2 norm is at most max_norm; returns
// the pre-clipping norm.
inline double clip_grad_norm(const ParamRefs& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / (norm + 1e-12);
    for (auto* p : params) p->grad *= scale;
  }
  return norm;
}

inline bool all_finite(const ParamRefs& params) {
  for (auto* p : params) {
    if (!p->value.allFinite() || !p->grad.allFinite()) return false;
  }
  return true;
}

// Fingerprint of names, shapes and values.
inline std::uint64_t parameter_hash(const ConstParamRefs& params) {
  Fnv1a h;
  for (const auto* p : params) {
    h.update(p->name);
    const auto rows = static_cast<std::int64_t>(p->value.rows());
    const auto cols = static_cast<std::int64_t>(p->value.cols());
    h.update_value(rows);
    h.update_value(cols);
    h.update(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return h.digest();
}

inline ConstParamRefs to_const(const ParamRefs& params) { return ConstParamRefs(params.begin(), params.end()); }
inline std::uint64_t parameter_hash(const ParamRefs& params) { return parameter_hash(to_const(params)); }

inline std::size_t parameter_count(const ConstParamRefs& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

inline std::size_t parameter_count(const ParamRefs& params) { return parameter_count(to_const(params)); }

inline Matrix gaussian(int rows, int cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

inline Matrix one_hot_rows(const std::vector<int>& labels, int classes) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return m;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

inline Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Elementwise tanh through the vectorized exp; std::tanh is not vectorized
// for doubles and dominated training time. Absolute error ~1e-16.
inline Matrix tanh(const Matrix& z) {
  const Matrix e = (2.0 * z.array().min(40.0).max(-40.0)).exp().matrix();
  return (1.0 - 2.0 / (e.array() + 1.0)).matrix();
}

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace ibts::nn
