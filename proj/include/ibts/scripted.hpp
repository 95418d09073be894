#pragma once

#include <array>
#include <vector>

#include "ibts/controller.hpp"

namespace ibts {

// Fixed action loops, one per style, with an optional chance of a uniformly
// random action. Distinct styles give behaviorally separable teams.
class ScriptedController : public Controller {
 public:
  static constexpr int kStyles = 5;

  explicit ScriptedController(int style, double noise = 0.0) : style_(style), noise_(noise) {
    if (style < 0 || style >= kStyles) throw Error("scripted.style", "unknown scripted style " + std::to_string(style));
  }

  int style() const { return style_; }

  void act(const WorldState& s, std::span<const int> agents, std::span<Action> out, Rng& rng) override {
    const auto& loop = loops()[static_cast<std::size_t>(style_)];
    for (std::size_t k = 0; k < agents.size(); ++k) {
      if (noise_ > 0.0 && rng.uniform() < noise_) {
        out[k] = kAllActions[static_cast<std::size_t>(rng.uniform_int(kNumActions))];
        continue;
      }
      const std::size_t phase = static_cast<std::size_t>(s.t + agents[k]) % loop.size();
      out[k] = loop[phase];
    }
  }

 private:
  static const std::array<std::vector<Action>, kStyles>& loops() {
    using enum Action;
    static const std::array<std::vector<Action>, kStyles> l = {{
        {North, North, South, South},
        {East, East, West, West},
        {North, East, South, West},
        {Interact, Interact, Stay},
        {Stay, Stay, Stay, North},
    }};
    return l;
  }

  int style_;
  double noise_;
};

}  // namespace ibts
