#pragma once

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <vector>

#include "ibts/env/types.hpp"
#include "ibts/nn/adam.hpp"
#include "ibts/nn/checkpoint.hpp"
#include "ibts/nn/losses.hpp"
#include "ibts/nn/mlp.hpp"

namespace ibts::shaping {

using nn::Matrix;

struct InfluenceConfig {
  std::vector<int> hidden{64, 64};
  double lr = 1e-4;
  int batch_size = 2048;
  int epochs = 1;
  double max_grad_norm = 0.5;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(InfluenceConfig, hidden, lr, batch_size, epochs, max_grad_norm)

// Row-aligned training data: obs is B x joint_dim; actions and labels are
// B*n, row-major (labels[t*n + j] is y for target j at step t).
struct InfluenceBatch {
  Matrix obs;
  std::vector<int> actions;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return static_cast<std::size_t>(obs.rows()); }
};

struct InfluenceLosses {
  Matrix q;                    // n x n, diagonal unused
  std::vector<double> omega;   // per target
};

// r_inf for each source agent from q[i][j] and omega[j] probabilities.
inline std::vector<double> influence_reward(const std::vector<std::vector<double>>& q, const std::vector<double>& omega) {
  const std::size_t n = omega.size();
  if (n < 2) throw Error("shaping.influence", "influence reward needs at least two agents");
  if (q.size() != n) throw Error("shaping.influence", "q and omega disagree on agent count");
  std::vector<double> r(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sum += std::max(q[i][j] - omega[j], 0.0);
    }
    r[i] = sum / static_cast<double>(n - 1);
  }
  return r;
}

// Directed classifiers q_{i->j}(y | obs, a_i) for every ordered pair and one
// observation-only baseline omega_j(y | obs) per target.
class InfluencePredictors {
 public:
  InfluencePredictors(int n, int joint_obs_dim, InfluenceConfig cfg, Rng& rng)
      : n_(n), dim_(joint_obs_dim), cfg_(std::move(cfg)) {
    if (n < 2) throw Error("shaping.influence", "influence predictors need at least two agents");
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        q_.emplace_back(dim_ + kNumActions, cfg_.hidden, 1, nn::Activation::Relu, rng,
                        "q" + std::to_string(i) + "_" + std::to_string(j));
      }
    }
    for (int j = 0; j < n; ++j) {
      omega_.emplace_back(dim_, cfg_.hidden, 1, nn::Activation::Relu, rng, "omega" + std::to_string(j));
    }
    const nn::AdamConfig opt{.lr = cfg_.lr};
    q_opt_.assign(q_.size(), nn::Adam(opt));
    omega_opt_.assign(omega_.size(), nn::Adam(opt));
  }

  int num_agents() const { return n_; }
  int joint_obs_dim() const { return dim_; }
  const InfluenceConfig& config() const { return cfg_; }
  std::size_t num_q_networks() const { return q_.size(); }
  std::size_t num_omega_networks() const { return omega_.size(); }

  nn::Mlp& q(int i, int j) { return q_[q_index(i, j)]; }
  nn::Mlp& omega(int j) { return omega_[static_cast<std::size_t>(j)]; }

  Matrix q_prob(int i, int j, const Matrix& obs, const std::vector<int>& actions) const {
    return sigmoid_matrix(q_[q_index(i, j)].forward(q_input(obs, actions, i)));
  }
  Matrix omega_prob(int j, const Matrix& obs) const {
    return sigmoid_matrix(omega_[static_cast<std::size_t>(j)].forward(obs));
  }

  // B x n matrix of r_inf for each row of joint observations and actions.
  Matrix rewards(const Matrix& obs, const std::vector<int>& actions) const {
    check(obs, actions);
    const auto B = obs.rows();
    std::vector<Matrix> om;
    for (int j = 0; j < n_; ++j) om.push_back(omega_prob(j, obs));
    Matrix r = Matrix::Zero(B, n_);
    for (int i = 0; i < n_; ++i) {
      const Matrix in = q_input(obs, actions, i);
      for (int j = 0; j < n_; ++j) {
        if (i == j) continue;
        const Matrix qp = sigmoid_matrix(q_[q_index(i, j)].forward(in));
        r.col(i).array() += (qp.col(0) - om[static_cast<std::size_t>(j)].col(0)).array().max(0.0);
      }
    }
    return r / static_cast<double>(n_ - 1);
  }

  // One pass (cfg.epochs) of minibatch BCE updates on every network; q and
  // omega see the same minibatches. Returns mean loss per network.
  InfluenceLosses update(const InfluenceBatch& batch, Rng& rng) {
    check(batch.obs, batch.actions);
    if (batch.size() == 0) throw Error("shaping.influence", "influence update on an empty batch");
    if (batch.labels.size() != batch.actions.size()) throw Error("shaping.influence", "labels and actions differ in size");
    InfluenceLosses out{Matrix::Zero(n_, n_), std::vector<double>(static_cast<std::size_t>(n_), 0.0)};
    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    double rows_seen = 0.0;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
        const auto rows = static_cast<Eigen::Index>(end - start);
        Matrix obs(rows, dim_);
        std::vector<int> acts(static_cast<std::size_t>(rows) * static_cast<std::size_t>(n_));
        std::vector<std::vector<double>> y(static_cast<std::size_t>(n_), std::vector<double>(static_cast<std::size_t>(rows)));
        for (Eigen::Index r = 0; r < rows; ++r) {
          const std::size_t src = order[start + static_cast<std::size_t>(r)];
          obs.row(r) = batch.obs.row(static_cast<Eigen::Index>(src));
          for (int j = 0; j < n_; ++j) {
            const std::size_t k = src * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j);
            acts[static_cast<std::size_t>(r) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)] = batch.actions[k];
            y[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] = batch.labels[k];
          }
        }
        for (int j = 0; j < n_; ++j) {
          out.omega[static_cast<std::size_t>(j)] +=
              rows * fit(omega_[static_cast<std::size_t>(j)], omega_opt_[static_cast<std::size_t>(j)], obs, y[static_cast<std::size_t>(j)]);
        }
        for (int i = 0; i < n_; ++i) {
          const Matrix in = q_input(obs, acts, i);
          for (int j = 0; j < n_; ++j) {
            if (i == j) continue;
            out.q(i, j) += rows * fit(q_[q_index(i, j)], q_opt_[q_index(i, j)], in, y[static_cast<std::size_t>(j)]);
          }
        }
        rows_seen += rows;
      }
    }
    out.q /= rows_seen;
    for (auto& v : out.omega) v /= rows_seen;
    return out;
  }

  nn::ParamRefs parameters() {
    nn::ParamRefs out;
    for (auto& m : q_) {
      auto p = m.parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    for (auto& m : omega_) {
      auto p = m.parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
  nn::ConstParamRefs parameters() const { return nn::to_const(const_cast<InfluencePredictors*>(this)->parameters()); }

  void save(const std::filesystem::path& path) const {
    nn::save_checkpoint(path, {{"kind", "influence"}, {"n", n_}, {"joint_obs_dim", dim_}, {"hidden", cfg_.hidden}}, parameters());
  }
  void load(const std::filesystem::path& path) { nn::assign_checkpoint(nn::load_checkpoint(path), parameters()); }

 private:
  std::size_t q_index(int i, int j) const {
    if (i == j || i < 0 || j < 0 || i >= n_ || j >= n_) throw Error("shaping.influence", "invalid influence pair");
    return static_cast<std::size_t>(i * (n_ - 1) + (j < i ? j : j - 1));
  }

  void check(const Matrix& obs, const std::vector<int>& actions) const {
    if (obs.cols() != dim_) throw Error("shaping.influence", "joint observation width mismatch");
    if (actions.size() != static_cast<std::size_t>(obs.rows()) * static_cast<std::size_t>(n_)) {
      throw Error("shaping.influence", "actions do not match observation rows");
    }
  }

  Matrix q_input(const Matrix& obs, const std::vector<int>& actions, int i) const {
    Matrix in = Matrix::Zero(obs.rows(), dim_ + kNumActions);
    in.leftCols(dim_) = obs;
    for (Eigen::Index r = 0; r < obs.rows(); ++r) {
      in(r, dim_ + actions[static_cast<std::size_t>(r * n_ + i)]) = 1.0;
    }
    return in;
  }

  static Matrix sigmoid_matrix(const Matrix& z) { return z.unaryExpr([](double v) { return nn::sigmoid(v); }); }

  double fit(nn::Mlp& net, nn::Adam& opt, const Matrix& x, const std::vector<double>& y) const {
    auto params = net.parameters();
    nn::zero_grad(params);
    nn::Mlp::Cache cache;
    const auto lg = nn::bce_with_logits(net.forward(x, cache), y);
    net.backward(cache, lg.grad);
    nn::clip_grad_norm(params, cfg_.max_grad_norm);
    opt.step(params);
    return lg.loss;
  }

  int n_;
  int dim_;
  InfluenceConfig cfg_;
  std::vector<nn::Mlp> q_;
  std::vector<nn::Mlp> omega_;
  std::vector<nn::Adam> q_opt_;
  std::vector<nn::Adam> omega_opt_;
};

}  // namespace ibts::shaping
