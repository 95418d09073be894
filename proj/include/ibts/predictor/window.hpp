#pragma once

#include <deque>
#include <span>
#include <vector>

#include "ibts/env/world.hpp"
#include "ibts/nn/tensor.hpp"

namespace ibts::predictor {

inline constexpr int kWindow = 20;
inline constexpr int kAgentFeatures = 16;  // x, y, facing(4), held(4), action(6)

struct AgentRecord {
  Cell position;
  Direction facing = Direction::North;
  Item held = Item::Nothing;
  Action action = Action::Stay;
  bool operator==(const AgentRecord&) const = default;
};

// One history step: every agent's state before the joint action, and the action.
using StepRecord = std::vector<AgentRecord>;

inline StepRecord record_step(const WorldState& s, std::span<const Action> joint) {
  StepRecord r(s.agents.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = {s.agents[i].position, s.agents[i].facing, s.agents[i].held, joint[i]};
  }
  return r;
}

struct TrajectoryWindow {
  int n = 0;
  nn::Matrix features;             // kWindow x (kAgentFeatures * n)
  std::vector<std::uint8_t> mask;  // kWindow, 1 = real step
  bool operator==(const TrajectoryWindow& o) const { return n == o.n && features == o.features && mask == o.mask; }
  int real_steps() const {
    int c = 0;
    for (auto m : mask) c += m;
    return c;
  }
};

inline void encode_record(const StepRecord& rec, const Layout& layout, double* row) {
  const double wx = std::max(1, layout.width() - 1);
  const double wy = std::max(1, layout.height() - 1);
  for (std::size_t i = 0; i < rec.size(); ++i) {
    double* f = row + i * kAgentFeatures;
    std::fill(f, f + kAgentFeatures, 0.0);
    f[0] = rec[i].position.x / wx;
    f[1] = rec[i].position.y / wy;
    f[2 + static_cast<int>(rec[i].facing)] = 1.0;
    f[6 + static_cast<int>(rec[i].held)] = 1.0;
    f[10 + index_of(rec[i].action)] = 1.0;
  }
}

// Last kWindow records, left-padded (mask 0) when the history is shorter.
inline TrajectoryWindow build_window(std::span<const StepRecord> history, const Layout& layout) {
  if (history.empty()) throw Error("predictor.window", "cannot build a window from an empty history");
  const int n = static_cast<int>(history.front().size());
  TrajectoryWindow w{n, nn::Matrix::Zero(kWindow, kAgentFeatures * n), std::vector<std::uint8_t>(kWindow, 0)};
  const std::size_t take = std::min<std::size_t>(history.size(), kWindow);
  const std::size_t first = history.size() - take;
  const std::size_t pad = kWindow - take;
  for (std::size_t k = 0; k < take; ++k) {
    const StepRecord& rec = history[first + k];
    if (static_cast<int>(rec.size()) != n) throw Error("predictor.window", "agent count changes within history");
    encode_record(rec, layout, w.features.row(static_cast<Eigen::Index>(pad + k)).data());
    w.mask[pad + k] = 1;
  }
  return w;
}

// Rolling history holding the most recent kWindow steps.
class History {
 public:
  void clear() { steps_.clear(); }
  void push(StepRecord rec) {
    steps_.push_back(std::move(rec));
    if (steps_.size() > kWindow) steps_.pop_front();
  }
  bool empty() const { return steps_.empty(); }
  std::size_t size() const { return steps_.size(); }
  TrajectoryWindow window(const Layout& layout) const {
    const std::vector<StepRecord> v(steps_.begin(), steps_.end());
    return build_window(v, layout);
  }

 private:
  std::deque<StepRecord> steps_;
};

}  // namespace ibts::predictor
