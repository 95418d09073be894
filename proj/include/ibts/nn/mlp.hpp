#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ibts/nn/linear.hpp"

namespace ibts::nn {

enum class Activation { Tanh, Relu };

// Feed-forward network: hidden layers with a shared activation, linear output.
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input of each linear layer
  };

  Mlp() = default;
  Mlp(int in, const std::vector<int>& hidden, int out, Activation act, Rng& rng, const std::string& prefix,
      double output_gain = 1.0)
      : act_(act) {
    int prev = in;
    for (std::size_t k = 0; k < hidden.size(); ++k) {
      const double gain = act == Activation::Relu ? std::sqrt(2.0) : 1.0;
      layers_.emplace_back(prev, hidden[k], prefix + ".l" + std::to_string(k), rng, gain / std::sqrt(prev));
      prev = hidden[k];
    }
    layers_.emplace_back(prev, out, prefix + ".out", rng, output_gain / std::sqrt(prev));
  }

  int in_dim() const { return layers_.front().in_dim(); }
  int out_dim() const { return layers_.back().out_dim(); }
  std::vector<int> hidden_sizes() const {
    std::vector<int> h;
    for (std::size_t k = 0; k + 1 < layers_.size(); ++k) h.push_back(layers_[k].out_dim());
    return h;
  }
  Activation activation() const { return act_; }

  Matrix forward(const Matrix& x) const {
    Matrix h = x;
    for (std::size_t k = 0; k + 1 < layers_.size(); ++k) h = activate(layers_[k].forward(h));
    return layers_.back().forward(h);
  }

  Matrix forward(const Matrix& x, Cache& cache) const {
    cache.inputs.resize(layers_.size());
    cache.inputs[0] = x;
    for (std::size_t k = 0; k + 1 < layers_.size(); ++k) cache.inputs[k + 1] = activate(layers_[k].forward(cache.inputs[k]));
    return layers_.back().forward(cache.inputs.back());
  }

  Matrix backward(const Cache& cache, const Matrix& dout) {
    Matrix d = layers_.back().backward(cache.inputs.back(), dout);
    for (std::size_t k = layers_.size() - 1; k-- > 0;) {
      d = d.cwiseProduct(activation_grad(cache.inputs[k + 1]));
      d = layers_[k].backward(cache.inputs[k], d);
    }
    return d;
  }

  ParamRefs parameters() {
    ParamRefs out;
    for (auto& l : layers_) l.append(out);
    return out;
  }
  ConstParamRefs parameters() const { return to_const(const_cast<Mlp*>(this)->parameters()); }

  Linear& output_layer() { return layers_.back(); }

 private:
  Matrix activate(const Matrix& z) const {
    if (act_ == Activation::Tanh) return nn::tanh(z);
    return z.cwiseMax(0.0);
  }
  // In terms of the activation output h.
  Matrix activation_grad(const Matrix& h) const {
    if (act_ == Activation::Tanh) return (1.0 - h.array().square()).matrix();
    return (h.array() > 0.0).cast<double>().matrix();
  }

  Activation act_ = Activation::Tanh;
  std::vector<Linear> layers_;
};

}  // namespace ibts::nn
