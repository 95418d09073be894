#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <json.hpp>

#include "ibts/policy.hpp"
#include "ibts/util/error.hpp"

namespace ibts::shaping {

struct ShapingWeights {
  int K = 4;
  double lambda_inf = 5.0;
  double lambda_div = 0.01;
  double epsilon = 1e-8;
  bool diversity_active = false;

  void validate() const {
    if (K < 1) throw Error("shaping.weights", "K must be >= 1");
    if (lambda_inf < 0.0 || lambda_div < 0.0) throw Error("shaping.weights", "shaping coefficients must be >= 0");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw Error("shaping.weights", "epsilon must be in (0, 1)");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ShapingWeights, K, lambda_inf, lambda_div, epsilon, diversity_active)

struct RewardBreakdown {
  double r_env = 0.0;
  double r_inf = 0.0;
  double r_div = 0.0;
  double total = 0.0;
};

inline double diversity_reward(double mean_prob, double epsilon) { return -std::log(std::max(mean_prob, epsilon)); }

inline RewardBreakdown combined_reward(double r_env, double r_inf, double r_div, const ShapingWeights& w) {
  RewardBreakdown b{r_env, r_inf, r_div, r_env + w.lambda_inf * r_inf};
  if (w.diversity_active) b.total += w.lambda_div * r_div;
  return b;
}

// Mean over teams of agent `agent`'s action distribution, row per observation.
inline nn::Matrix population_mean_policy(std::span<const TeamPolicy* const> teams, const nn::Matrix& obs, int agent) {
  if (teams.empty()) throw Error("shaping.population", "population mean over an empty pool");
  nn::Matrix mean = nn::Matrix::Zero(obs.rows(), kNumActions);
  for (const TeamPolicy* team : teams) mean += team->action_probs(agent, obs);
  return mean / static_cast<double>(teams.size());
}

}  // namespace ibts::shaping
