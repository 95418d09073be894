#pragma once

#include <map>
#include <span>
#include <vector>

#include "ibts/env/world.hpp"

namespace ibts::eval {

inline constexpr int kDefaultHandoffWindow = 4;
inline constexpr double kDefaultHandoffBonus = 3.0;

// A handoff: one agent places an object on a counter and a different agent
// picks that same object up from it at most `window` steps later.
class HandoffDetector {
 public:
  explicit HandoffDetector(int window = kDefaultHandoffWindow) : window_(window) {
    if (window < 0) throw Error("eval.handoff", "handoff window must be >= 0");
  }

  void reset() { placed_.clear(); }

  // Feeds one step's counter events (in resolution order); returns the number
  // of handoffs completed by them.
  int feed(std::span<const CounterEvent> events) {
    int count = 0;
    for (const auto& ev : events) {
      const auto key = std::make_pair(ev.cell.x, ev.cell.y);
      if (ev.kind == CounterEvent::Kind::Place) {
        placed_[key] = ev;
        continue;
      }
      const auto it = placed_.find(key);
      if (it == placed_.end()) continue;
      if (it->second.agent != ev.agent && ev.step - it->second.step <= window_) ++count;
      placed_.erase(it);
    }
    return count;
  }

  int window() const { return window_; }

 private:
  int window_;
  std::map<std::pair<int, int>, CounterEvent> placed_;
};

inline int count_handoffs(std::span<const CounterEvent> events, int window = kDefaultHandoffWindow) {
  HandoffDetector d(window);
  return d.feed(events);
}

}  // namespace ibts::eval
