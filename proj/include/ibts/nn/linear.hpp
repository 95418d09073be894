#pragma once

#include <string>
#include <vector>

#include "ibts/nn/tensor.hpp"

namespace ibts::nn {

// y = x W + b, rows are samples.
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, const std::string& name, Rng& rng, double stddev)
      : weight_(name + ".weight", gaussian(in, out, stddev, rng)),
        bias_(name + ".bias", Matrix::Zero(1, out)) {}

  int in_dim() const { return static_cast<int>(weight_.value.rows()); }
  int out_dim() const { return static_cast<int>(weight_.value.cols()); }

  Matrix forward(const Matrix& x) const {
    Matrix y = x * weight_.value;
    y.rowwise() += bias_.value.row(0);
    return y;
  }

  // Accumulates parameter gradients; returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy) {
    weight_.grad.noalias() += x.transpose() * dy;
    bias_.grad.row(0) += dy.colwise().sum();
    return dy * weight_.value.transpose();
  }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }

  void append(ParamRefs& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter weight_;
  Parameter bias_;
};

}  // namespace ibts::nn
