#pragma once

#include "ibts/marl/ppo.hpp"

namespace ibts::test {

// Two-state contextual bandit: one-hot state, episodes of length one,
// reward 1 for action 0 (North) in either state. Returns the smallest
// probability of action 0 over the two states after each update; stops
// early once that probability exceeds stop_above.
inline std::vector<double> run_bandit(std::uint64_t seed, int updates, marl::PPOConfig cfg,
                                      double stop_above = 2.0, int rows = 2048) {
  Rng rng(seed);
  marl::ActorCritic ac({1, 2, 2, cfg.hidden}, cfg.lr, rng, "bandit");
  std::vector<double> history;
  for (int u = 0; u < updates; ++u) {
    marl::RolloutBuffer buf;
    buf.allocate(rows, 1, 1, 2, 2);
    buf.n_agents = 1;
    for (int r = 0; r < rows; ++r) {
      const int s = static_cast<int>(rng.uniform_int(2));
      buf.obs[0](r, s) = 1.0;
      buf.critic_obs(r, s) = 1.0;
    }
    const nn::Matrix logp = nn::log_softmax_rows(ac.actor(0).logits(buf.obs[0]));
    const nn::Matrix v = ac.critic().values(buf.critic_obs);
    for (int r = 0; r < rows; ++r) {
      const Eigen::RowVectorXd p = logp.row(r).array().exp();
      const int a = marl::sample_action(p.data(), rng);
      buf.actions[static_cast<std::size_t>(r)] = a;
      buf.log_probs(r, 0) = logp(r, a);
      buf.values[static_cast<std::size_t>(r)] = v(r, 0);
      buf.rewards[static_cast<std::size_t>(r)] = a == 0 ? 1.0 : 0.0;
      buf.dones[static_cast<std::size_t>(r)] = 1;
    }
    marl::compute_gae(buf, cfg);
    marl::ppo_update(ac, buf, cfg, rng);
    const nn::Matrix probe = nn::Matrix::Identity(2, 2);
    history.push_back(ac.actor(0).probs(probe).col(0).minCoeff());
    if (history.back() > stop_above) break;
  }
  return history;
}

}  // namespace ibts::test
