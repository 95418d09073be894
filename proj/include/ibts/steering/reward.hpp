#pragma once

#include <algorithm>
#include <span>

#include <json.hpp>

#include "ibts/util/error.hpp"

namespace ibts::steering {

struct SteeringConfig {
  double alpha = 0.5;
  int delta = 10;
  NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(SteeringConfig, alpha, delta)
  void validate() const {
    if (!(alpha >= 0.0) || delta < 1) throw Error("config.steering", "need alpha >= 0 and delta >= 1");
  }
};

// Quality of a history: the team distribution's expectation of the
// normalized pool scores.
inline double trajectory_quality(std::span<const double> p, std::span<const double> scores) {
  if (p.size() != scores.size() || p.empty()) {
    throw Error("steering.length", "team distribution and score vector differ in length");
  }
  double q = 0.0;
  for (std::size_t m = 0; m < p.size(); ++m) q += p[m] * scores[m];
  return q;
}

inline double steering_reward(double q_now, double q_future, bool valid) {
  return valid ? std::max(q_future - q_now, 0.0) : 0.0;
}

inline double total_reward(double r_env, double r_steer, const SteeringConfig& cfg) {
  return r_env + cfg.alpha * r_steer;
}

}  // namespace ibts::steering
