#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "ibts/env/world.hpp"
#include "ibts/util/error.hpp"

namespace ibts::shaping {

// Layout of the collaborative feature vector for a (layout, n) pair:
//   per agent: x, y, held one-hot (nothing, onion, dish, soup)
//   per counter cell: item one-hot (onion, dish, soup)
//   per pot: onion count
inline int collab_feature_width(const Layout& layout, int n) {
  return 6 * n + 3 * static_cast<int>(layout.counters().size()) + static_cast<int>(layout.pots().size());
}

inline void collab_features(const WorldState& s, std::vector<double>& out) {
  const Layout& layout = *s.layout;
  out.assign(static_cast<std::size_t>(collab_feature_width(layout, s.num_agents())), 0.0);
  std::size_t k = 0;
  for (const AgentState& a : s.agents) {
    out[k] = a.position.x;
    out[k + 1] = a.position.y;
    out[k + 2 + static_cast<std::size_t>(a.held)] = 1.0;
    k += 6;
  }
  for (const Cell& c : layout.counters()) {
    const Item item = s.item_at(c);
    if (item != Item::Nothing) out[k + static_cast<std::size_t>(item) - 1] = 1.0;
    k += 3;
  }
  for (const PotState& p : s.pots) out[k++] = p.onions;
}

inline std::vector<double> collab_features(const WorldState& s) {
  std::vector<double> out;
  collab_features(s, out);
  return out;
}

struct SalientActionRecord {
  int t = 0;
  Action action = Action::North;
  std::array<double, kNumActions> change{};  // mean L2 feature change per candidate
};

// Each candidate action is simulated one step for every agent in turn with
// the others staying; the induced feature change is averaged over agents.
// Ties resolve to the earliest action in kAllActions order.
inline SalientActionRecord salient_action(const WorldState& s) {
  SalientActionRecord rec;
  rec.t = s.t;
  const int n = s.num_agents();
  const std::vector<double> base = collab_features(s);
  std::vector<double> next;
  JointAction joint(static_cast<std::size_t>(n), Action::Stay);
  for (std::size_t a = 0; a < kAllActions.size(); ++a) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      joint[static_cast<std::size_t>(i)] = kAllActions[a];
      collab_features(step(s, joint).state, next);
      joint[static_cast<std::size_t>(i)] = Action::Stay;
      double sq = 0.0;
      for (std::size_t k = 0; k < base.size(); ++k) sq += (next[k] - base[k]) * (next[k] - base[k]);
      total += std::sqrt(sq);
    }
    rec.change[a] = total / n;
  }
  std::size_t best = 0;
  for (std::size_t a = 1; a < kAllActions.size(); ++a) {
    if (rec.change[a] > rec.change[best]) best = a;
  }
  rec.action = kAllActions[best];
  return rec;
}

// labels[t][j] == 1 iff agent j takes salient[t] at some step t+1..t+K that
// exists in the trajectory.
inline std::vector<std::vector<std::uint8_t>> event_labels(const std::vector<JointAction>& actions,
                                                           const std::vector<Action>& salient, int K) {
  if (K < 1) throw Error("shaping.labels", "event horizon K must be >= 1");
  if (actions.empty()) throw Error("shaping.labels", "empty trajectory");
  if (salient.size() != actions.size()) throw Error("shaping.labels", "salient actions and trajectory differ in length");
  const std::size_t T = actions.size();
  const std::size_t n = actions.front().size();
  std::vector<std::vector<std::uint8_t>> y(T, std::vector<std::uint8_t>(n, 0));
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t end = std::min(T, t + 1 + static_cast<std::size_t>(K));
    for (std::size_t u = t + 1; u < end; ++u) {
      for (std::size_t j = 0; j < n; ++j) {
        if (actions[u][j] == salient[t]) y[t][j] = 1;
      }
    }
  }
  return y;
}

}  // namespace ibts::shaping
