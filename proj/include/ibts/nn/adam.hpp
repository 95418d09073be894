#pragma once

#include <cmath>
#include <vector>

#include "ibts/nn/tensor.hpp"

namespace ibts::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

// Moment state is positional: pass the same parameter list every step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps() const { return t_; }

  void step(const ParamRefs& params) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * p.grad;
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
      if (cfg_.weight_decay > 0.0) p.value *= (1.0 - cfg_.lr * cfg_.weight_decay);
      p.value.array() -= cfg_.lr * (m_[k].array() / bc1) / ((v_[k].array() / bc2).sqrt() + cfg_.eps);
    }
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace ibts::nn
