#pragma once

#include <memory>
#include <span>
#include <vector>

#include "ibts/env/observation.hpp"
#include "ibts/env/world.hpp"
#include "ibts/marl/ppo.hpp"

namespace ibts::marl {

// Fixed set of worlds that reset themselves when an episode reaches the
// horizon. Episode seeds are derived from (seed, env, episode count).
class VecEnv {
 public:
  VecEnv(std::shared_ptr<const Layout> layout, int n_agents, int n_envs, std::uint64_t seed)
      : layout_(std::move(layout)), n_(n_agents), seed_(seed), episodes_(static_cast<std::size_t>(n_envs), 0),
        started_(static_cast<std::size_t>(n_envs), false) {
    if (n_envs < 1) throw Error("env.vec", "need at least one environment");
    for (int e = 0; e < n_envs; ++e) states_.push_back(reset(layout_, n_, episode_seed(e)));
  }

  int size() const { return static_cast<int>(states_.size()); }
  int num_agents() const { return n_; }
  const std::shared_ptr<const Layout>& layout() const { return layout_; }
  const WorldState& state(int e) const { return states_[static_cast<std::size_t>(e)]; }
  const std::vector<WorldState>& states() const { return states_; }
  long episodes_finished() const { return finished_; }

  // True once per episode: the first call after a reset.
  bool take_episode_start(int e) {
    if (started_[static_cast<std::size_t>(e)]) return false;
    started_[static_cast<std::size_t>(e)] = true;
    return true;
  }

  // Advances env e; returns the step result (pre-reset). Resets the world
  // when the horizon is reached.
  StepResult advance(int e, const JointAction& joint) {
    auto& s = states_[static_cast<std::size_t>(e)];
    StepResult r = step(s, joint);
    if (r.state.t >= kHorizon) {
      ++episodes_[static_cast<std::size_t>(e)];
      ++finished_;
      started_[static_cast<std::size_t>(e)] = false;
      s = reset(layout_, n_, episode_seed(e));
    } else {
      s = r.state;
    }
    return r;
  }

 private:
  std::uint64_t episode_seed(int e) const {
    return derive_seed(derive_seed(seed_, static_cast<std::uint64_t>(e)), episodes_[static_cast<std::size_t>(e)]);
  }

  std::shared_ptr<const Layout> layout_;
  int n_;
  std::uint64_t seed_;
  std::vector<WorldState> states_;
  std::vector<std::uint64_t> episodes_;
  std::vector<bool> started_;
  long finished_ = 0;
};

// Centralized critic input: every agent's ego observation in index order,
// then per pot (onions/3, cooking, remaining/cook_time, ready), then t/H.
class CriticEncoder {
 public:
  explicit CriticEncoder(const ObservationEncoder& enc) : enc_(&enc) {}
  int width() const {
    return enc_->num_agents() * enc_->width() + 4 * static_cast<int>(enc_->layout()->pots().size()) + 1;
  }
  // ego rows: per agent, the already-encoded observation.
  void encode(const WorldState& s, const std::vector<const double*>& ego, std::span<double> out) const {
    const int w = enc_->width();
    std::size_t k = 0;
    for (const double* o : ego) {
      std::copy(o, o + w, out.begin() + static_cast<std::ptrdiff_t>(k));
      k += static_cast<std::size_t>(w);
    }
    const double cook = s.layout->cook_time();
    for (const PotState& p : s.pots) {
      out[k++] = p.onions / 3.0;
      out[k++] = p.cooking() ? 1.0 : 0.0;
      out[k++] = p.cooking() ? p.cook_timer / cook : 0.0;
      out[k++] = p.ready ? 1.0 : 0.0;
    }
    out[k] = static_cast<double>(s.t) / kHorizon;
  }

 private:
  const ObservationEncoder* enc_;
};

// Customization points for rollout collection. Agents not controlled by the
// learner are driven by partner_probs; extra features (e.g. a coordination
// embedding) are appended to the learner's actor and critic inputs.
class RolloutHooks {
 public:
  virtual ~RolloutHooks() = default;
  virtual int extra_dim() const { return 0; }
  virtual void episode_start(int /*env*/, const WorldState& /*s*/, Rng& /*rng*/) {}
  virtual void extra_features(int /*env*/, const WorldState& /*s*/, std::span<double> /*out*/) {}
  virtual Matrix partner_probs(int /*agent*/, const std::vector<int>& /*envs*/, const Matrix& /*obs*/) {
    throw Error("rollout.hooks", "partner policy required for agents not controlled by the learner");
  }
  virtual void after_step(int /*env*/, std::size_t /*row*/, const WorldState& /*before*/, const JointAction& /*joint*/,
                          const StepResult& /*result*/) {}
};

// Runs n_steps synchronous steps in every env. Slot k of the learner drives
// env agent learner_agents[k]. Buffer rewards default to the env reward.
inline void collect_rollout(const ActorCritic& ac, VecEnv& venv, const ObservationEncoder& enc,
                            const std::vector<int>& learner_agents, RolloutHooks* hooks, int n_steps, Rng& rng,
                            RolloutBuffer& buf) {
  const int E = venv.size();
  const int n = venv.num_agents();
  const int S = static_cast<int>(learner_agents.size());
  const int extra = hooks ? hooks->extra_dim() : 0;
  const int w = enc.width();
  const CriticEncoder critic_enc(enc);
  if (S != ac.num_agents()) throw Error("rollout.slots", "learner slot count does not match actor count");
  if (ac.dims().actor_input != w + extra || ac.dims().critic_input != critic_enc.width() + extra) {
    throw Error("rollout.dims", "actor/critic input widths do not match the environment encoding");
  }
  std::vector<int> partner_agents;
  for (int a = 0; a < n; ++a) {
    if (std::find(learner_agents.begin(), learner_agents.end(), a) == learner_agents.end()) partner_agents.push_back(a);
  }
  if (!partner_agents.empty() && !hooks) throw Error("rollout.hooks", "partners present but no hooks supplied");

  buf.allocate(E, n_steps, S, w + extra, critic_enc.width() + extra);
  buf.n_agents = n;
  buf.env_rewards.assign(buf.rows(), 0.0);
  buf.joint_actions.assign(buf.rows() * static_cast<std::size_t>(n), 0);

  std::vector<int> all_envs(static_cast<std::size_t>(E));
  std::iota(all_envs.begin(), all_envs.end(), 0);
  std::vector<Matrix> ego(static_cast<std::size_t>(n), Matrix(E, w));
  Matrix extras = Matrix::Zero(E, extra);
  Matrix critic_in(E, critic_enc.width() + extra);
  std::vector<JointAction> joint(static_cast<std::size_t>(E), JointAction(static_cast<std::size_t>(n)));

  auto encode_all = [&] {
    for (int e = 0; e < E; ++e) {
      const WorldState& s = venv.state(e);
      if (hooks && venv.take_episode_start(e)) hooks->episode_start(e, s, rng);
      std::vector<const double*> rows;
      for (int a = 0; a < n; ++a) {
        auto& m = ego[static_cast<std::size_t>(a)];
        enc.encode(s, a, std::span<double>(m.row(e).data(), static_cast<std::size_t>(w)));
        rows.push_back(m.row(e).data());
      }
      if (extra > 0) hooks->extra_features(e, s, std::span<double>(extras.row(e).data(), static_cast<std::size_t>(extra)));
      critic_enc.encode(s, rows, std::span<double>(critic_in.row(e).data(), static_cast<std::size_t>(critic_enc.width())));
      if (extra > 0) critic_in.row(e).tail(extra) = extras.row(e);
    }
  };

  for (int t = 0; t < n_steps; ++t) {
    encode_all();
    const Matrix values = ac.critic().values(critic_in);
    for (int k = 0; k < S; ++k) {
      const int agent = learner_agents[static_cast<std::size_t>(k)];
      Matrix x(E, w + extra);
      x.leftCols(w) = ego[static_cast<std::size_t>(agent)];
      if (extra > 0) x.rightCols(extra) = extras;
      const Matrix logp = nn::log_softmax_rows(ac.actor(k).logits(x));
      for (int e = 0; e < E; ++e) {
        const std::size_t r = buf.row(t, e);
        const Eigen::RowVectorXd p = logp.row(e).array().exp();
        const int a = sample_action(p.data(), rng);
        joint[static_cast<std::size_t>(e)][static_cast<std::size_t>(agent)] = kAllActions[static_cast<std::size_t>(a)];
        buf.actions[r * static_cast<std::size_t>(S) + static_cast<std::size_t>(k)] = a;
        buf.log_probs(static_cast<Eigen::Index>(r), k) = logp(e, a);
      }
      for (int e = 0; e < E; ++e) buf.obs[static_cast<std::size_t>(k)].row(static_cast<Eigen::Index>(buf.row(t, e))) = x.row(e);
    }
    for (int agent : partner_agents) {
      const Matrix p = hooks->partner_probs(agent, all_envs, ego[static_cast<std::size_t>(agent)]);
      for (int e = 0; e < E; ++e) {
        joint[static_cast<std::size_t>(e)][static_cast<std::size_t>(agent)] = kAllActions[static_cast<std::size_t>(sample_action(p.row(e).data(), rng))];
      }
    }
    for (int e = 0; e < E; ++e) {
      const std::size_t r = buf.row(t, e);
      buf.critic_obs.row(static_cast<Eigen::Index>(r)) = critic_in.row(e);
      buf.values[r] = values(e, 0);
      const WorldState before = venv.state(e);
      const StepResult res = venv.advance(e, joint[static_cast<std::size_t>(e)]);
      buf.env_rewards[r] = res.events.env_reward();
      buf.rewards[r] = buf.env_rewards[r];
      buf.dones[r] = res.state.t >= kHorizon ? 1 : 0;
      for (int a = 0; a < n; ++a) {
        buf.joint_actions[r * static_cast<std::size_t>(n) + static_cast<std::size_t>(a)] =
            index_of(joint[static_cast<std::size_t>(e)][static_cast<std::size_t>(a)]);
      }
      if (hooks) hooks->after_step(e, r, before, joint[static_cast<std::size_t>(e)], res);
    }
  }
  encode_all();
  const Matrix boot = ac.critic().values(critic_in);
  for (int e = 0; e < E; ++e) buf.bootstrap[static_cast<std::size_t>(e)] = boot(e, 0);
}

// Mean undiscounted environment return per episode of `policy` (slot a drives
// agent a), sampling actions; episodes run in parallel worlds.
inline double mean_episode_return(const TeamPolicy& policy, std::shared_ptr<const Layout> layout, int episodes,
                                  std::uint64_t seed) {
  if (episodes < 1) throw Error("eval.episodes", "need at least one evaluation episode");
  const int n = policy.num_agents();
  const ObservationEncoder enc(layout, n);
  std::vector<WorldState> states;
  for (int e = 0; e < episodes; ++e) states.push_back(reset(layout, n, derive_seed(seed, static_cast<std::uint64_t>(e))));
  Rng rng(derive_seed(seed, 0xe7a1));
  Matrix obs(episodes, enc.width());
  std::vector<JointAction> joint(static_cast<std::size_t>(episodes), JointAction(static_cast<std::size_t>(n)));
  for (int t = 0; t < kHorizon; ++t) {
    for (int a = 0; a < n; ++a) {
      for (int e = 0; e < episodes; ++e) {
        enc.encode(states[static_cast<std::size_t>(e)], a, std::span<double>(obs.row(e).data(), static_cast<std::size_t>(enc.width())));
      }
      const Matrix p = policy.action_probs(a, obs);
      for (int e = 0; e < episodes; ++e) {
        joint[static_cast<std::size_t>(e)][static_cast<std::size_t>(a)] = kAllActions[static_cast<std::size_t>(sample_action(p.row(e).data(), rng))];
      }
    }
    for (int e = 0; e < episodes; ++e) states[static_cast<std::size_t>(e)] = step(states[static_cast<std::size_t>(e)], joint[static_cast<std::size_t>(e)]).state;
  }
  double total = 0.0;
  for (const auto& s : states) total += s.score;
  return total / episodes;
}

}  // namespace ibts::marl
