#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ibts/env/layout.hpp"
#include "ibts/env/types.hpp"
#include "ibts/util/error.hpp"

namespace ibts {

struct AgentState {
  Cell position;
  Direction facing = Direction::North;
  Item held = Item::Nothing;
  bool operator==(const AgentState&) const = default;
};

struct PotState {
  static constexpr int kIdle = -1;

  int onions = 0;
  int cook_timer = kIdle;  // remaining cook steps while cooking
  bool ready = false;

  bool cooking() const { return cook_timer > 0; }
  bool operator==(const PotState&) const = default;
};

struct WorldState {
  std::shared_ptr<const Layout> layout;
  std::vector<AgentState> agents;
  std::vector<PotState> pots;       // aligned with layout->pots()
  std::vector<Item> counter_items;  // dense width*height grid; only counters are non-empty
  int t = 0;
  int score = 0;
  std::uint64_t seed = 0;

  int num_agents() const { return static_cast<int>(agents.size()); }
  Item item_at(Cell c) const {
    return layout->in_bounds(c) ? counter_items[static_cast<std::size_t>(layout->index(c))] : Item::Nothing;
  }
  const PotState* pot_at(Cell c) const {
    const int p = layout->pot_index(c);
    return p < 0 ? nullptr : &pots[static_cast<std::size_t>(p)];
  }
  void set_item(Cell c, Item item) { counter_items[static_cast<std::size_t>(layout->index(c))] = item; }
  int agent_at(Cell c) const {
    for (int i = 0; i < num_agents(); ++i) {
      if (agents[static_cast<std::size_t>(i)].position == c) return i;
    }
    return -1;
  }

  friend bool operator==(const WorldState& a, const WorldState& b) {
    const bool same_layout = a.layout == b.layout || (a.layout && b.layout && a.layout->name() == b.layout->name() &&
                                                      a.layout->render() == b.layout->render());
    return same_layout && a.agents == b.agents && a.pots == b.pots && a.counter_items == b.counter_items &&
           a.t == b.t && a.score == b.score && a.seed == b.seed;
  }
};

inline constexpr int kOnionPottedReward = 3;
inline constexpr int kSoupPickedUpReward = 5;
inline constexpr int kSoupDeliveredReward = 20;

// Per-step reward events with per-agent attribution.
struct RewardEvents {
  std::vector<int> onion_potted;
  std::vector<int> soup_picked_up;
  std::vector<int> soup_delivered;

  explicit RewardEvents(int n = 0)
      : onion_potted(static_cast<std::size_t>(n), 0),
        soup_picked_up(static_cast<std::size_t>(n), 0),
        soup_delivered(static_cast<std::size_t>(n), 0) {}

  static int sum(const std::vector<int>& v) { return std::accumulate(v.begin(), v.end(), 0); }
  int total_onion_potted() const { return sum(onion_potted); }
  int total_soup_picked_up() const { return sum(soup_picked_up); }
  int total_soup_delivered() const { return sum(soup_delivered); }
  int env_reward() const {
    return kOnionPottedReward * total_onion_potted() + kSoupPickedUpReward * total_soup_picked_up() +
           kSoupDeliveredReward * total_soup_delivered();
  }
  bool any() const { return total_onion_potted() + total_soup_picked_up() + total_soup_delivered() > 0; }
  bool operator==(const RewardEvents&) const = default;
};

// An object placed on or taken from a counter during a step.
struct CounterEvent {
  enum class Kind : std::uint8_t { Place, Pick };
  int step = 0;
  int agent = 0;
  Kind kind = Kind::Place;
  Cell cell;
  Item item = Item::Nothing;
  bool operator==(const CounterEvent&) const = default;
};

struct StepResult {
  WorldState state;
  RewardEvents events;
  std::vector<CounterEvent> counter_events;
};

inline WorldState reset(std::shared_ptr<const Layout> layout, int n, std::uint64_t seed) {
  if (!layout) throw Error("env.reset", "null layout");
  if (n < 1 || n > layout->max_agents()) {
    throw Error("env.reset", "agent count " + std::to_string(n) + " exceeds spawn count " +
                                 std::to_string(layout->max_agents()) + " of layout '" + layout->name() + "'");
  }
  WorldState s;
  s.agents.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    s.agents.push_back({layout->spawn_points()[static_cast<std::size_t>(i)], Direction::North, Item::Nothing});
  }
  s.pots.assign(layout->pots().size(), PotState{});
  s.counter_items.assign(static_cast<std::size_t>(layout->width() * layout->height()), Item::Nothing);
  s.seed = seed;
  s.layout = std::move(layout);
  return s;
}

namespace detail {

// Sequential interact resolution in agent-index order against the
// current (pre-movement) positions and facings.
inline void resolve_interact(WorldState& s, int i, RewardEvents& events, std::vector<CounterEvent>& counter_events) {
  AgentState& agent = s.agents[static_cast<std::size_t>(i)];
  const Layout& layout = *s.layout;
  const Cell target = neighbor(agent.position, agent.facing);
  switch (layout.at(target)) {
    case Tile::Floor:
      return;
    case Tile::Counter: {
      const Item on_counter = s.item_at(target);
      if (agent.held != Item::Nothing && on_counter == Item::Nothing) {
        counter_events.push_back({s.t, i, CounterEvent::Kind::Place, target, agent.held});
        s.set_item(target, agent.held);
        agent.held = Item::Nothing;
      } else if (agent.held == Item::Nothing && on_counter != Item::Nothing) {
        counter_events.push_back({s.t, i, CounterEvent::Kind::Pick, target, on_counter});
        agent.held = on_counter;
        s.set_item(target, Item::Nothing);
      }
      return;
    }
    case Tile::OnionSource:
      if (agent.held == Item::Nothing) agent.held = Item::Onion;
      return;
    case Tile::DishSource:
      if (agent.held == Item::Nothing) agent.held = Item::Dish;
      return;
    case Tile::Pot: {
      PotState& pot = s.pots[static_cast<std::size_t>(layout.pot_index(target))];
      if (agent.held == Item::Onion && !pot.cooking() && !pot.ready && pot.onions < 3) {
        ++pot.onions;
        agent.held = Item::Nothing;
        ++events.onion_potted[static_cast<std::size_t>(i)];
        if (pot.onions == 3) pot.cook_timer = layout.cook_time();
      } else if (agent.held == Item::Dish && pot.ready) {
        pot = PotState{};
        agent.held = Item::Soup;
        ++events.soup_picked_up[static_cast<std::size_t>(i)];
      }
      return;
    }
    case Tile::ServeWindow:
      if (agent.held == Item::Soup) {
        agent.held = Item::Nothing;
        ++events.soup_delivered[static_cast<std::size_t>(i)];
      }
      return;
  }
}

// Order-independent simultaneous movement: same-target conflicts, swaps and
// moves into a non-vacating agent's cell are reverted until a fixpoint.
inline std::vector<Cell> resolve_movement(const WorldState& s, std::span<const Action> actions) {
  const auto n = s.agents.size();
  std::vector<Cell> current(n), proposed(n);
  for (std::size_t i = 0; i < n; ++i) {
    current[i] = proposed[i] = s.agents[i].position;
    if (auto d = movement_direction(actions[i])) {
      const Cell target = neighbor(current[i], *d);
      if (s.layout->is_floor(target)) proposed[i] = target;
    }
  }
  std::vector<bool> revert(n);
  for (;;) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      revert[i] = false;
      if (proposed[i] == current[i]) continue;
      for (std::size_t j = 0; j < n && !revert[i]; ++j) {
        if (j == i) continue;
        const bool same_target = proposed[j] == proposed[i];
        const bool swap = proposed[i] == current[j] && proposed[j] == current[i];
        const bool into_stayer = proposed[i] == current[j] && proposed[j] == current[j];
        revert[i] = same_target || swap || into_stayer;
      }
      any = any || revert[i];
    }
    if (!any) break;
    for (std::size_t i = 0; i < n; ++i) {
      if (revert[i]) proposed[i] = current[i];
    }
  }
  return proposed;
}

}  // namespace detail

// One synchronous environment transition. Pots tick first, then interacts
// resolve in agent-index order, then movement resolves simultaneously.
inline StepResult step(const WorldState& state, std::span<const Action> actions) {
  if (actions.size() != state.agents.size()) {
    throw Error("env.step", "joint action has " + std::to_string(actions.size()) + " entries for " +
                                std::to_string(state.agents.size()) + " agents");
  }
  if (state.t >= kHorizon) {
    throw Error("env.horizon", "step requested at t=" + std::to_string(state.t) + " (horizon " +
                                   std::to_string(kHorizon) + ")");
  }
  StepResult result{state, RewardEvents(state.num_agents()), {}};
  WorldState& next = result.state;

  for (PotState& pot : next.pots) {
    if (pot.cooking()) {
      --pot.cook_timer;
      if (pot.cook_timer == 0) pot.ready = true;
    }
  }
  for (int i = 0; i < next.num_agents(); ++i) {
    if (actions[static_cast<std::size_t>(i)] == Action::Interact) {
      detail::resolve_interact(next, i, result.events, result.counter_events);
    }
  }
  const auto positions = detail::resolve_movement(next, actions);
  for (std::size_t i = 0; i < next.agents.size(); ++i) {
    if (auto d = movement_direction(actions[i])) next.agents[i].facing = *d;
    next.agents[i].position = positions[i];
  }
  ++next.t;
  next.score += result.events.env_reward();
  return result;
}

inline StepResult step(const WorldState& state, const JointAction& actions) {
  return step(state, std::span<const Action>(actions.data(), actions.size()));
}

// Elementwise `step` over worlds sharing one layout.
inline std::vector<StepResult> step_batch(std::span<const WorldState> states, std::span<const JointAction> actions) {
  if (states.size() != actions.size()) {
    throw Error("env.step_batch", "state/action batch sizes differ: " + std::to_string(states.size()) + " vs " +
                                      std::to_string(actions.size()));
  }
  for (const auto& s : states) {
    if (s.layout != states[0].layout) throw Error("env.mixed_layouts", "step_batch requires a single shared layout");
  }
  std::vector<StepResult> out;
  out.reserve(states.size());
  for (std::size_t k = 0; k < states.size(); ++k) out.push_back(step(states[k], actions[k]));
  return out;
}

}  // namespace ibts
