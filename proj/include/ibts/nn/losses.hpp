#pragma once

#include <vector>

#include "ibts/nn/tensor.hpp"

namespace ibts::nn {

struct LossGrad {
  double loss = 0.0;
  Matrix grad;  // dLoss/dlogits
};

// Mean binary cross-entropy on logits (B x 1) against labels in {0, 1}.
inline LossGrad bce_with_logits(const Matrix& logits, const std::vector<double>& labels) {
  LossGrad out;
  const auto B = logits.rows();
  out.grad.resize(B, 1);
  for (Eigen::Index i = 0; i < B; ++i) {
    const double z = logits(i, 0);
    const double y = labels[static_cast<std::size_t>(i)];
    out.loss += softplus(z) - y * z;
    out.grad(i, 0) = (sigmoid(z) - y) / static_cast<double>(B);
  }
  out.loss /= static_cast<double>(B);
  return out;
}

// Mean categorical cross-entropy on logits (B x C) against class indices.
inline LossGrad cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  LossGrad out;
  const auto B = logits.rows();
  const Matrix logp = log_softmax_rows(logits);
  out.grad = logp.array().exp().matrix();
  for (Eigen::Index i = 0; i < B; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    out.loss -= logp(i, y);
    out.grad(i, y) -= 1.0;
  }
  out.loss /= static_cast<double>(B);
  out.grad /= static_cast<double>(B);
  return out;
}

}  // namespace ibts::nn
