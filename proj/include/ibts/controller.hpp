#pragma once

#include <memory>
#include <span>

#include "ibts/env/observation.hpp"
#include "ibts/nn/tensor.hpp"
#include "ibts/policy.hpp"

namespace ibts {

// Anything that picks actions for a contiguous set of agents from the full
// world state: scripted teams, heuristics, policy networks.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset(const WorldState& /*initial*/) {}
  // Writes one action per controlled agent into out (agents[k] -> out[k]).
  virtual void act(const WorldState& s, std::span<const int> agents, std::span<Action> out, Rng& rng) = 0;
  // Called after every step with the pre-step state and the full joint action.
  virtual void observe(const WorldState& /*before*/, std::span<const Action> /*joint*/) {}
};

inline int sample_from(std::span<const double> probs, Rng& rng) {
  double u = rng.uniform();
  for (std::size_t a = 0; a + 1 < probs.size(); ++a) {
    u -= probs[a];
    if (u < 0.0) return static_cast<int>(a);
  }
  return static_cast<int>(probs.size()) - 1;
}

// Samples each controlled agent's action from a TeamPolicy; slot k of the
// policy is used for agent k.
class PolicyController : public Controller {
 public:
  PolicyController(const TeamPolicy& policy, std::shared_ptr<const Layout> layout, int n, bool greedy = false)
      : policy_(&policy), enc_(std::move(layout), n), greedy_(greedy), obs_(1, enc_.width()) {}

  void act(const WorldState& s, std::span<const int> agents, std::span<Action> out, Rng& rng) override {
    for (std::size_t k = 0; k < agents.size(); ++k) {
      enc_.encode(s, agents[k], std::span<double>(obs_.data(), static_cast<std::size_t>(enc_.width())));
      const nn::Matrix p = policy_->action_probs(agents[k], obs_);
      int a = 0;
      if (greedy_) {
        p.row(0).maxCoeff(&a);
      } else {
        a = sample_from(std::span<const double>(p.data(), kNumActions), rng);
      }
      out[k] = kAllActions[static_cast<std::size_t>(a)];
    }
  }

 private:
  const TeamPolicy* policy_;
  ObservationEncoder enc_;
  bool greedy_;
  nn::Matrix obs_;
};

}  // namespace ibts
