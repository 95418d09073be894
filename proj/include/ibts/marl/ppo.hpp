#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "ibts/nn/adam.hpp"
#include "ibts/nn/checkpoint.hpp"
#include "ibts/nn/losses.hpp"
#include "ibts/nn/mlp.hpp"
#include "ibts/policy.hpp"

namespace ibts::marl {

using nn::Matrix;

struct PPOConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.15;
  double entropy_coef = 0.05;
  double lr = 1e-4;
  int epochs = 6;
  int batch_size = 1024;
  int n_envs = 64;
  int n_steps = 1024;
  double max_grad_norm = 0.5;
  double target_kl = 0.025;
  std::vector<int> hidden{64, 64};

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
      throw Error("config.ppo", "gamma must be in (0,1] and gae_lambda in [0,1]");
    }
    if (!(clip > 0.0 && clip < 1.0)) throw Error("config.ppo", "clip must be in (0,1)");
    if (entropy_coef < 0.0 || lr <= 0.0 || max_grad_norm <= 0.0 || target_kl <= 0.0) {
      throw Error("config.ppo", "entropy_coef, lr, max_grad_norm and target_kl must be positive");
    }
    if (epochs < 1 || batch_size < 1 || n_envs < 1 || n_steps < 1) {
      throw Error("config.ppo", "epochs, batch_size, n_envs and n_steps must be >= 1");
    }
    if (hidden.empty()) throw Error("config.ppo", "policy needs at least one hidden layer");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PPOConfig, gamma, gae_lambda, clip, entropy_coef, lr, epochs, batch_size,
                                                n_envs, n_steps, max_grad_norm, target_kl, hidden)

// Actor: observation (optionally with an appended embedding) -> 6 logits.
class PolicyNet {
 public:
  PolicyNet() = default;
  PolicyNet(int input_dim, const std::vector<int>& hidden, Rng& rng, const std::string& name)
      : net_(input_dim, hidden, kNumActions, nn::Activation::Tanh, rng, name, 0.01) {}

  int input_dim() const { return net_.in_dim(); }
  Matrix logits(const Matrix& x) const { return net_.forward(x); }
  Matrix probs(const Matrix& x) const { return nn::softmax_rows(net_.forward(x)); }
  nn::Mlp& net() { return net_; }
  const nn::Mlp& net() const { return net_; }
  nn::ParamRefs parameters() { return net_.parameters(); }
  nn::ConstParamRefs parameters() const { return net_.parameters(); }

 private:
  nn::Mlp net_;
};

class CriticNet {
 public:
  CriticNet() = default;
  CriticNet(int input_dim, const std::vector<int>& hidden, Rng& rng, const std::string& name)
      : net_(input_dim, hidden, 1, nn::Activation::Tanh, rng, name, 1.0) {}

  int input_dim() const { return net_.in_dim(); }
  Matrix values(const Matrix& x) const { return net_.forward(x); }
  nn::Mlp& net() { return net_; }
  nn::ParamRefs parameters() { return net_.parameters(); }
  nn::ConstParamRefs parameters() const { return net_.parameters(); }

 private:
  nn::Mlp net_;
};

inline int sample_action(const double* probs, Rng& rng) {
  double u = rng.uniform();
  for (int a = 0; a < kNumActions - 1; ++a) {
    u -= probs[a];
    if (u < 0.0) return a;
  }
  return kNumActions - 1;
}

// Per-slot actors plus one shared critic; actor k controls slot k.
class ActorCritic : public TeamPolicy {
 public:
  struct Dims {
    int slots = 1;
    int actor_input = 0;
    int critic_input = 0;
    std::vector<int> hidden{64, 64};
  };

  ActorCritic(const Dims& dims, double lr, Rng& rng, const std::string& name = "team") : dims_(dims), name_(name) {
    for (int k = 0; k < dims.slots; ++k) {
      actors_.emplace_back(dims.actor_input, dims.hidden, rng, name + ".actor" + std::to_string(k));
    }
    critic_ = CriticNet(dims.critic_input, dims.hidden, rng, name + ".critic");
    actor_opt_ = nn::Adam(nn::AdamConfig{.lr = lr});
    critic_opt_ = nn::Adam(nn::AdamConfig{.lr = lr});
  }

  const Dims& dims() const { return dims_; }
  const std::string& name() const { return name_; }
  int num_agents() const override { return dims_.slots; }
  Matrix action_probs(int slot, const Matrix& obs) const override { return actor(slot).probs(obs); }

  PolicyNet& actor(int k) { return actors_.at(static_cast<std::size_t>(k)); }
  const PolicyNet& actor(int k) const { return actors_.at(static_cast<std::size_t>(k)); }
  CriticNet& critic() { return critic_; }
  const CriticNet& critic() const { return critic_; }
  nn::Adam& actor_optimizer() { return actor_opt_; }
  nn::Adam& critic_optimizer() { return critic_opt_; }

  nn::ParamRefs actor_parameters() {
    nn::ParamRefs out;
    for (auto& a : actors_) {
      auto p = a.parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
  nn::ParamRefs parameters() {
    auto out = actor_parameters();
    auto c = critic_.parameters();
    out.insert(out.end(), c.begin(), c.end());
    return out;
  }
  nn::ConstParamRefs parameters() const { return nn::to_const(const_cast<ActorCritic*>(this)->parameters()); }
  std::uint64_t hash() const { return nn::parameter_hash(parameters()); }

  nlohmann::json meta() const {
    return {{"kind", "actor_critic"}, {"name", name_},          {"slots", dims_.slots},
            {"actor_input", dims_.actor_input}, {"critic_input", dims_.critic_input}, {"hidden", dims_.hidden}};
  }
  void save(const std::filesystem::path& path, nlohmann::json extra = nlohmann::json::object()) const {
    nlohmann::json m = meta();
    m["extra"] = std::move(extra);
    nn::save_checkpoint(path, m, parameters());
  }
  static ActorCritic load(const std::filesystem::path& path, double lr = 1e-4) {
    const auto ck = nn::load_checkpoint(path);
    const auto& m = ck.meta;
    if (m.value("kind", "") != "actor_critic") throw Error("checkpoint.kind", path.string() + " is not an actor-critic checkpoint");
    Dims d{m.at("slots").get<int>(), m.at("actor_input").get<int>(), m.at("critic_input").get<int>(),
           m.at("hidden").get<std::vector<int>>()};
    Rng rng(0);
    ActorCritic ac(d, lr, rng, m.at("name").get<std::string>());
    nn::assign_checkpoint(ck, ac.parameters());
    return ac;
  }

 private:
  Dims dims_;
  std::string name_;
  std::vector<PolicyNet> actors_;
  CriticNet critic_;
  nn::Adam actor_opt_;
  nn::Adam critic_opt_;
};

// Transitions stored step-major: row = t * n_envs + e.
struct RolloutBuffer {
  int n_envs = 0;
  int n_steps = 0;
  int slots = 0;
  int n_agents = 0;
  std::vector<Matrix> obs;          // per slot, rows x actor_input
  Matrix critic_obs;                // rows x critic_input
  std::vector<int> actions;         // rows x slots
  Matrix log_probs;                 // rows x slots
  std::vector<double> values;       // rows
  std::vector<double> bootstrap;    // per env: V(state after the last step)
  std::vector<double> rewards;      // rows, reward the learner optimizes
  std::vector<std::uint8_t> dones;  // rows, episode ended after this step
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<double> env_rewards;  // rows, shared team environment reward
  std::vector<int> joint_actions;   // rows x n_agents

  std::size_t rows() const { return static_cast<std::size_t>(n_envs) * static_cast<std::size_t>(n_steps); }
  std::size_t row(int t, int e) const { return static_cast<std::size_t>(t) * n_envs + static_cast<std::size_t>(e); }

  void allocate(int envs, int steps, int n_slots, int actor_input, int critic_input) {
    n_envs = envs;
    n_steps = steps;
    slots = n_slots;
    const auto R = static_cast<Eigen::Index>(rows());
    obs.assign(static_cast<std::size_t>(n_slots), Matrix::Zero(R, actor_input));
    critic_obs = Matrix::Zero(R, critic_input);
    actions.assign(rows() * static_cast<std::size_t>(n_slots), 0);
    log_probs = Matrix::Zero(R, n_slots);
    values.assign(rows(), 0.0);
    bootstrap.assign(static_cast<std::size_t>(envs), 0.0);
    rewards.assign(rows(), 0.0);
    dones.assign(rows(), 0);
    advantages.clear();
    returns.clear();
  }
};

// Recursive GAE with episode-boundary masking; returns = advantages + values.
inline void compute_gae(RolloutBuffer& buf, const PPOConfig& cfg) {
  if (buf.bootstrap.size() != static_cast<std::size_t>(buf.n_envs)) {
    throw Error("ppo.gae", "missing bootstrap values for rollout");
  }
  if (buf.values.size() != buf.rows() || buf.rewards.size() != buf.rows() || buf.dones.size() != buf.rows()) {
    throw Error("ppo.gae", "rollout buffer arrays have inconsistent sizes");
  }
  buf.advantages.assign(buf.rows(), 0.0);
  buf.returns.assign(buf.rows(), 0.0);
  for (int e = 0; e < buf.n_envs; ++e) {
    double last = 0.0;
    for (int t = buf.n_steps - 1; t >= 0; --t) {
      const std::size_t r = buf.row(t, e);
      const double next_value = t == buf.n_steps - 1 ? buf.bootstrap[static_cast<std::size_t>(e)] : buf.values[buf.row(t + 1, e)];
      const double live = buf.dones[r] ? 0.0 : 1.0;
      const double delta = buf.rewards[r] + cfg.gamma * next_value * live - buf.values[r];
      last = delta + cfg.gamma * cfg.gae_lambda * live * last;
      buf.advantages[r] = last;
      buf.returns[r] = last + buf.values[r];
    }
  }
}

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;  // last measured
  double clip_fraction = 0.0;
  int epochs_completed = 0;
  int minibatches = 0;
  bool early_stopped = false;
};

// Gradient of the clipped surrogate (to be minimized) with respect to
// log pi(a|o): zero where the clipped branch is active.
inline double surrogate_grad(double ratio, double advantage, double clip) {
  if ((advantage > 0.0 && ratio > 1.0 + clip) || (advantage < 0.0 && ratio < 1.0 - clip)) return 0.0;
  return -ratio * advantage;
}

// Clipped-surrogate PPO over every slot's actor plus the shared critic.
// Advantages are standardized over the whole buffer. Before each minibatch
// step the approximate KL to the behaviour policy is measured on that
// minibatch; once it exceeds target_kl no further steps are applied.
inline UpdateStats ppo_update(ActorCritic& ac, RolloutBuffer& buf, const PPOConfig& cfg, Rng& rng) {
  if (buf.advantages.size() != buf.rows()) throw Error("ppo.update", "advantages not computed for this rollout");
  const std::size_t R = buf.rows();
  std::vector<double> adv = buf.advantages;
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(R);
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double stdev = std::sqrt(var / static_cast<double>(R));
  for (double& a : adv) a = (a - mean) / (stdev + 1e-8);

  UpdateStats stats;
  std::vector<std::size_t> order(R);
  std::iota(order.begin(), order.end(), 0);
  auto actor_params = ac.actor_parameters();
  auto critic_params = ac.critic().parameters();
  const int S = buf.slots;
  double clipped = 0.0, counted = 0.0;

  for (int epoch = 0; epoch < cfg.epochs && !stats.early_stopped; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < R; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(R, start + static_cast<std::size_t>(cfg.batch_size));
      const auto B = static_cast<Eigen::Index>(end - start);
      nn::zero_grad(actor_params);
      nn::zero_grad(critic_params);
      double policy_loss = 0.0, entropy = 0.0, kl = 0.0;
      for (int k = 0; k < S; ++k) {
        Matrix x(B, buf.obs[static_cast<std::size_t>(k)].cols());
        for (Eigen::Index i = 0; i < B; ++i) x.row(i) = buf.obs[static_cast<std::size_t>(k)].row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(i)]));
        nn::Mlp::Cache cache;
        const Matrix logits = ac.actor(k).net().forward(x, cache);
        const Matrix logp = nn::log_softmax_rows(logits);
        Matrix dlogits(B, kNumActions);
        for (Eigen::Index i = 0; i < B; ++i) {
          const std::size_t r = order[start + static_cast<std::size_t>(i)];
          const int a = buf.actions[r * static_cast<std::size_t>(S) + static_cast<std::size_t>(k)];
          const double old = buf.log_probs(static_cast<Eigen::Index>(r), k);
          const double log_ratio = logp(i, a) - old;
          const double ratio = std::exp(log_ratio);
          const double A = adv[r];
          policy_loss += -std::min(ratio * A, std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * A);
          kl += (ratio - 1.0) - log_ratio;
          if (std::abs(ratio - 1.0) > cfg.clip) clipped += 1.0;
          counted += 1.0;
          const auto p = logp.row(i).array().exp();
          const double H = -(p * logp.row(i).array()).sum();
          entropy += H;
          // d(surrogate)/dz = g * (onehot(a) - p); d(-c H)/dz = c * p * (log p + H).
          const double g = surrogate_grad(ratio, A, cfg.clip);
          dlogits.row(i) = (-g * p).matrix() + (cfg.entropy_coef * p * (logp.row(i).array() + H)).matrix();
          dlogits(i, a) += g;
        }
        dlogits /= static_cast<double>(B);
        ac.actor(k).net().backward(cache, dlogits);
      }
      kl /= static_cast<double>(B * S);
      stats.approx_kl = kl;
      if (kl > cfg.target_kl) {
        stats.early_stopped = true;
        break;
      }

      Matrix cx(B, buf.critic_obs.cols());
      Eigen::VectorXd ret(B);
      for (Eigen::Index i = 0; i < B; ++i) {
        const std::size_t r = order[start + static_cast<std::size_t>(i)];
        cx.row(i) = buf.critic_obs.row(static_cast<Eigen::Index>(r));
        ret(i) = buf.returns[r];
      }
      nn::Mlp::Cache vcache;
      const Matrix v = ac.critic().net().forward(cx, vcache);
      const Matrix dv = (v.col(0) - ret) / static_cast<double>(B);
      const double value_loss = 0.5 * (v.col(0) - ret).squaredNorm() / static_cast<double>(B);
      ac.critic().net().backward(vcache, dv);

      policy_loss /= static_cast<double>(B);
      entropy /= static_cast<double>(B * S);
      if (!std::isfinite(policy_loss) || !std::isfinite(value_loss) || !nn::all_finite(actor_params) ||
          !nn::all_finite(critic_params)) {
        throw Error("train.nonfinite", "non-finite loss in PPO update (policy " + std::to_string(policy_loss) +
                                           ", value " + std::to_string(value_loss) + ")");
      }
      nn::clip_grad_norm(actor_params, cfg.max_grad_norm);
      nn::clip_grad_norm(critic_params, cfg.max_grad_norm);
      ac.actor_optimizer().step(actor_params);
      ac.critic_optimizer().step(critic_params);
      stats.policy_loss = policy_loss;
      stats.value_loss = value_loss;
      stats.entropy = entropy;
      ++stats.minibatches;
    }
    if (!stats.early_stopped) ++stats.epochs_completed;
  }
  stats.clip_fraction = counted > 0 ? clipped / counted : 0.0;
  return stats;
}

}  // namespace ibts::marl
