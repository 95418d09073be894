#pragma once

#include "ibts/marl/ppo.hpp"

namespace ibts::test {

// Definitional GAE: A_t = sum_l (gamma*lambda)^l delta_{t+l}, the sum
// stopping after the step that ends the episode or at the buffer end.
inline std::vector<double> gae_oracle(const marl::RolloutBuffer& buf, double gamma, double lambda) {
  std::vector<double> adv(buf.rows(), 0.0);
  for (int e = 0; e < buf.n_envs; ++e) {
    for (int t = 0; t < buf.n_steps; ++t) {
      double sum = 0.0;
      double w = 1.0;
      for (int u = t; u < buf.n_steps; ++u) {
        const std::size_t r = buf.row(u, e);
        const double next = u == buf.n_steps - 1 ? buf.bootstrap[static_cast<std::size_t>(e)] : buf.values[buf.row(u + 1, e)];
        const double delta = buf.rewards[r] + (buf.dones[r] ? 0.0 : gamma * next) - buf.values[r];
        sum += w * delta;
        if (buf.dones[r]) break;
        w *= gamma * lambda;
      }
      adv[buf.row(t, e)] = sum;
    }
  }
  return adv;
}

inline marl::RolloutBuffer random_rollout(Rng& rng, int envs, int steps, double done_prob) {
  marl::RolloutBuffer buf;
  buf.allocate(envs, steps, 1, 1, 1);
  for (std::size_t r = 0; r < buf.rows(); ++r) {
    buf.rewards[r] = rng.uniform(-1.0, 20.0);
    buf.values[r] = rng.uniform(-5.0, 5.0);
    buf.dones[r] = rng.uniform() < done_prob ? 1 : 0;
  }
  for (auto& b : buf.bootstrap) b = rng.uniform(-5.0, 5.0);
  return buf;
}

}  // namespace ibts::test
