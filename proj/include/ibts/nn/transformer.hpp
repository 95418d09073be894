#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ibts/nn/linear.hpp"
#include "ibts/util/error.hpp"

namespace ibts::nn {

struct EncoderConfig {
  int d_model = 64;
  int heads = 4;
  int layers = 2;
  int feedforward = 128;
  double dropout = 0.1;
  int window = 20;

  void validate() const {
    if (d_model <= 0 || heads <= 0 || layers <= 0 || feedforward <= 0 || window <= 0) {
      throw Error("nn.config", "encoder dimensions must be positive");
    }
    if (d_model % heads != 0) throw Error("nn.config", "d_model must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("nn.config", "dropout must be in [0, 1)");
  }
};

// Rows are scaled by 1/(1-p) where kept, 0 where dropped.
inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p ? 0.0 : keep;
  return m;
}

class LayerNorm {
 public:
  struct Cache {
    Matrix xhat;
    Eigen::VectorXd rstd;
  };

  LayerNorm() = default;
  LayerNorm(int d, const std::string& name)
      : gamma_(name + ".gamma", Matrix::Ones(1, d)), beta_(name + ".beta", Matrix::Zero(1, d)) {}

  Matrix forward(const Matrix& x, Cache* cache) const {
    const auto d = static_cast<double>(x.cols());
    Matrix xhat(x.rows(), x.cols());
    Eigen::VectorXd rstd(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mean = x.row(r).sum() / d;
      const double var = (x.row(r).array() - mean).square().sum() / d;
      rstd(r) = 1.0 / std::sqrt(var + kEps);
      xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
    }
    Matrix y = xhat.array().rowwise() * gamma_.value.row(0).array();
    y.rowwise() += beta_.value.row(0);
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->rstd = std::move(rstd);
    }
    return y;
  }

  Matrix backward(const Cache& cache, const Matrix& dy) {
    gamma_.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    beta_.grad.row(0) += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * gamma_.value.row(0).array();
    const auto d = static_cast<double>(dy.cols());
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const double m1 = dxhat.row(r).sum() / d;
      const double m2 = (dxhat.row(r).array() * cache.xhat.row(r).array()).sum() / d;
      dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2);
    }
    return dx;
  }

  void append(ParamRefs& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

 private:
  static constexpr double kEps = 1e-5;
  Parameter gamma_;
  Parameter beta_;
};

// Post-norm encoder block: x -> LN(x + Drop(MHA(x))) -> LN(. + Drop(FFN(.))).
// Inputs are stacked sequences: B samples of L rows each.
class EncoderLayer {
 public:
  struct Cache {
    Matrix input;
    Matrix qkv;
    std::vector<Matrix> attention;  // B*heads matrices of L x L
    Matrix heads;
    Matrix attn_drop;
    LayerNorm::Cache ln1;
    Matrix h1;
    Matrix ff_pre;
    Matrix ff_drop;
    Matrix ff_hidden;  // relu(ff_pre) after dropout
    Matrix out_drop;
    LayerNorm::Cache ln2;
  };

  EncoderLayer() = default;
  EncoderLayer(const EncoderConfig& cfg, Rng& rng, const std::string& name)
      : d_(cfg.d_model),
        heads_(cfg.heads),
        qkv_(cfg.d_model, 3 * cfg.d_model, name + ".qkv", rng, 1.0 / std::sqrt(cfg.d_model)),
        out_(cfg.d_model, cfg.d_model, name + ".attn_out", rng, 1.0 / std::sqrt(cfg.d_model)),
        ln1_(cfg.d_model, name + ".ln1"),
        ff1_(cfg.d_model, cfg.feedforward, name + ".ff1", rng, std::sqrt(2.0 / cfg.d_model)),
        ff2_(cfg.feedforward, cfg.d_model, name + ".ff2", rng, 1.0 / std::sqrt(cfg.feedforward)),
        ln2_(cfg.d_model, name + ".ln2") {}

  Matrix forward(const Matrix& x, const std::vector<std::uint8_t>& mask, int B, int L, Cache* cache, Rng* rng,
                 double p) const {
    const int dk = d_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const Matrix qkv = qkv_.forward(x);
    Matrix heads(x.rows(), d_);
    std::vector<Matrix> attention;
    if (cache) attention.reserve(static_cast<std::size_t>(B * heads_));
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < heads_; ++h) {
        const auto Q = qkv.block(b * L, h * dk, L, dk);
        const auto K = qkv.block(b * L, d_ + h * dk, L, dk);
        const auto V = qkv.block(b * L, 2 * d_ + h * dk, L, dk);
        Matrix S = (Q * K.transpose()) * scale;
        for (int j = 0; j < L; ++j) {
          if (!mask[static_cast<std::size_t>(b * L + j)]) S.col(j).setConstant(-std::numeric_limits<double>::infinity());
        }
        Matrix A = softmax_rows(S);
        heads.block(b * L, h * dk, L, dk) = A * V;
        if (cache) attention.push_back(std::move(A));
      }
    }
    Matrix attn = out_.forward(heads);
    const bool train = rng != nullptr && p > 0.0;
    Matrix attn_drop, ff_drop, out_drop;
    if (train) {
      attn_drop = dropout_mask(attn.rows(), attn.cols(), p, *rng);
      attn.array() *= attn_drop.array();
    }
    LayerNorm::Cache ln1c;
    Matrix h1 = ln1_.forward(x + attn, cache ? &ln1c : nullptr);
    Matrix ff_pre = ff1_.forward(h1);
    Matrix hidden = ff_pre.cwiseMax(0.0);
    if (train) {
      ff_drop = dropout_mask(hidden.rows(), hidden.cols(), p, *rng);
      hidden.array() *= ff_drop.array();
    }
    Matrix ff_out = ff2_.forward(hidden);
    if (train) {
      out_drop = dropout_mask(ff_out.rows(), ff_out.cols(), p, *rng);
      ff_out.array() *= out_drop.array();
    }
    LayerNorm::Cache ln2c;
    Matrix y = ln2_.forward(h1 + ff_out, cache ? &ln2c : nullptr);
    if (cache) {
      cache->input = x;
      cache->qkv = qkv;
      cache->attention = std::move(attention);
      cache->heads = std::move(heads);
      cache->attn_drop = std::move(attn_drop);
      cache->ln1 = std::move(ln1c);
      cache->h1 = std::move(h1);
      cache->ff_pre = std::move(ff_pre);
      cache->ff_drop = std::move(ff_drop);
      cache->ff_hidden = std::move(hidden);
      cache->out_drop = std::move(out_drop);
      cache->ln2 = std::move(ln2c);
    }
    return y;
  }

  Matrix backward(const Cache& c, const Matrix& dy, int B, int L) {
    const int dk = d_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const Matrix dr2 = ln2_.backward(c.ln2, dy);
    Matrix dff_out = dr2;
    if (c.out_drop.size()) dff_out.array() *= c.out_drop.array();
    Matrix dhidden = ff2_.backward(c.ff_hidden, dff_out);
    if (c.ff_drop.size()) dhidden.array() *= c.ff_drop.array();
    dhidden.array() *= (c.ff_pre.array() > 0.0).cast<double>();
    Matrix dh1 = dr2 + ff1_.backward(c.h1, dhidden);
    const Matrix dr1 = ln1_.backward(c.ln1, dh1);
    Matrix dattn = dr1;
    if (c.attn_drop.size()) dattn.array() *= c.attn_drop.array();
    const Matrix dheads = out_.backward(c.heads, dattn);
    Matrix dqkv = Matrix::Zero(c.qkv.rows(), c.qkv.cols());
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < heads_; ++h) {
        const Matrix& A = c.attention[static_cast<std::size_t>(b * heads_ + h)];
        const auto Q = c.qkv.block(b * L, h * dk, L, dk);
        const auto K = c.qkv.block(b * L, d_ + h * dk, L, dk);
        const auto V = c.qkv.block(b * L, 2 * d_ + h * dk, L, dk);
        const auto dO = dheads.block(b * L, h * dk, L, dk);
        const Matrix dA = dO * V.transpose();
        dqkv.block(b * L, 2 * d_ + h * dk, L, dk) = A.transpose() * dO;
        const Eigen::VectorXd rowdot = (dA.array() * A.array()).rowwise().sum();
        Matrix dS = A.array() * (dA.colwise() - rowdot).array();
        dS *= scale;
        dqkv.block(b * L, h * dk, L, dk) = dS * K;
        dqkv.block(b * L, d_ + h * dk, L, dk) = dS.transpose() * Q;
      }
    }
    return dr1 + qkv_.backward(c.input, dqkv);
  }

  void append(ParamRefs& out) {
    qkv_.append(out);
    out_.append(out);
    ln1_.append(out);
    ff1_.append(out);
    ff2_.append(out);
    ln2_.append(out);
  }

 private:
  int d_ = 0;
  int heads_ = 1;
  Linear qkv_, out_;
  LayerNorm ln1_;
  Linear ff1_, ff2_;
  LayerNorm ln2_;
};

// Input projection + learned positional embedding + encoder blocks +
// mean pooling over unmasked positions.
class TransformerEncoder {
 public:
  struct Cache {
    Matrix input;
    std::vector<EncoderLayer::Cache> layers;
  };

  TransformerEncoder() = default;
  TransformerEncoder(int feature_dim, const EncoderConfig& cfg, Rng& rng, const std::string& name = "encoder")
      : cfg_(cfg),
        feature_dim_(feature_dim),
        input_(feature_dim, cfg.d_model, name + ".input", rng, 1.0 / std::sqrt(feature_dim)),
        position_(name + ".position", gaussian(cfg.window, cfg.d_model, 0.02, rng)) {
    cfg.validate();
    for (int k = 0; k < cfg.layers; ++k) layers_.emplace_back(cfg, rng, name + ".layer" + std::to_string(k));
  }

  const EncoderConfig& config() const { return cfg_; }
  int feature_dim() const { return feature_dim_; }

  // x stacks B windows of `window` rows; mask marks real (non-padded) rows.
  // With rng == nullptr the pass is in inference mode (no dropout).
  Matrix forward(const Matrix& x, const std::vector<std::uint8_t>& mask, int B, Cache* cache = nullptr,
                 Rng* rng = nullptr) const {
    const int L = cfg_.window;
    if (x.rows() != static_cast<Eigen::Index>(B) * L || x.cols() != feature_dim_ ||
        mask.size() != static_cast<std::size_t>(B * L)) {
      throw Error("nn.shape", "encoder input shape mismatch");
    }
    Matrix h = input_.forward(x);
    for (int b = 0; b < B; ++b) h.block(b * L, 0, L, cfg_.d_model) += position_.value;
    if (cache) {
      cache->input = x;
      cache->layers.assign(layers_.size(), {});
    }
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      h = layers_[k].forward(h, mask, B, L, cache ? &cache->layers[k] : nullptr, rng, cfg_.dropout);
    }
    Matrix pooled = Matrix::Zero(B, cfg_.d_model);
    for (int b = 0; b < B; ++b) {
      int count = 0;
      for (int l = 0; l < L; ++l) {
        if (mask[static_cast<std::size_t>(b * L + l)]) {
          pooled.row(b) += h.row(b * L + l);
          ++count;
        }
      }
      if (count > 0) pooled.row(b) /= count;
    }
    return pooled;
  }

  void backward(const Cache& cache, const std::vector<std::uint8_t>& mask, int B, const Matrix& dpooled) {
    const int L = cfg_.window;
    Matrix dh = Matrix::Zero(static_cast<Eigen::Index>(B) * L, cfg_.d_model);
    for (int b = 0; b < B; ++b) {
      int count = 0;
      for (int l = 0; l < L; ++l) count += mask[static_cast<std::size_t>(b * L + l)] ? 1 : 0;
      if (count == 0) continue;
      for (int l = 0; l < L; ++l) {
        if (mask[static_cast<std::size_t>(b * L + l)]) dh.row(b * L + l) = dpooled.row(b) / count;
      }
    }
    for (std::size_t k = layers_.size(); k-- > 0;) dh = layers_[k].backward(cache.layers[k], dh, B, L);
    for (int b = 0; b < B; ++b) position_.grad += dh.block(b * L, 0, L, cfg_.d_model);
    input_.backward(cache.input, dh);
  }

  ParamRefs parameters() {
    ParamRefs out;
    input_.append(out);
    out.push_back(&position_);
    for (auto& l : layers_) l.append(out);
    return out;
  }
  ConstParamRefs parameters() const { return to_const(const_cast<TransformerEncoder*>(this)->parameters()); }

 private:
  EncoderConfig cfg_;
  int feature_dim_ = 0;
  Linear input_;
  Parameter position_;
  std::vector<EncoderLayer> layers_;
};

}  // namespace ibts::nn
