#pragma once

#include <algorithm>
#include <deque>
#include <optional>
#include <vector>

#include "ibts/controller.hpp"

namespace ibts::eval {

enum class PassingRole : std::uint8_t { Fetcher, Passer, Cook };

inline std::string_view to_string(PassingRole r) {
  switch (r) {
    case PassingRole::Fetcher: return "fetcher";
    case PassingRole::Passer: return "passer";
    case PassingRole::Cook: return "cook";
  }
  return "?";
}

// Floor regions separated by counters, ordered along the onion -> pot chain.
class PipelineMap {
 public:
  explicit PipelineMap(const Layout& layout) : layout_(&layout), region_(static_cast<std::size_t>(layout.width() * layout.height()), -1) {
    flood_regions();
    int onion_region = -1, pot_region = -1;
    for (int r = 0; r < regions_; ++r) {
      if (onion_region < 0 && touches(r, Tile::OnionSource)) onion_region = r;
      if (pot_region < 0 && touches(r, Tile::Pot)) pot_region = r;
    }
    if (onion_region < 0 || pot_region < 0 || onion_region == pot_region) {
      throw Error("eval.role", "layout '" + layout.name() + "' has no onion-to-pot pipeline of separate regions");
    }
    chain_ = region_path(onion_region, pot_region);
    if (chain_.empty()) throw Error("eval.role", "onion and pot regions are not connected through counters");
  }

  const Layout& layout() const { return *layout_; }
  int region_of(Cell c) const { return layout_->in_bounds(c) ? region_[static_cast<std::size_t>(layout_->index(c))] : -1; }
  // Position of a region along the chain, or -1.
  int stage_of_region(int region) const {
    const auto it = std::find(chain_.begin(), chain_.end(), region);
    return it == chain_.end() ? -1 : static_cast<int>(it - chain_.begin());
  }
  int stages() const { return static_cast<int>(chain_.size()); }

  PassingRole role_at(Cell position) const {
    const int stage = stage_of_region(region_of(position));
    if (stage < 0) throw Error("eval.role", "agent region is not on the onion-to-pot chain");
    if (stage == 0) return PassingRole::Fetcher;
    if (stage == stages() - 1) return PassingRole::Cook;
    return PassingRole::Passer;
  }

  // Counters between the stage and the previous / next one.
  std::vector<Cell> upstream_counters(int stage) const { return stage <= 0 ? std::vector<Cell>{} : shared(chain_[stage - 1], chain_[stage]); }
  std::vector<Cell> downstream_counters(int stage) const {
    return stage + 1 >= stages() ? std::vector<Cell>{} : shared(chain_[stage], chain_[stage + 1]);
  }
  int region_at_stage(int stage) const { return chain_[static_cast<std::size_t>(stage)]; }

  // Non-floor cells of kind t touching a region.
  std::vector<Cell> tiles_touching(int region, Tile t) const {
    std::vector<Cell> out;
    for (const Cell c : layout_->cells_of(t)) {
      if (touches_cell(region, c)) out.push_back(c);
    }
    return out;
  }

 private:
  static constexpr std::array<Direction, 4> kDirs = {Direction::North, Direction::South, Direction::East, Direction::West};

  void flood_regions() {
    for (int y = 0; y < layout_->height(); ++y) {
      for (int x = 0; x < layout_->width(); ++x) {
        const Cell start{x, y};
        if (!layout_->is_floor(start) || region_of(start) >= 0) continue;
        std::deque<Cell> q{start};
        region_[static_cast<std::size_t>(layout_->index(start))] = regions_;
        while (!q.empty()) {
          const Cell c = q.front();
          q.pop_front();
          for (Direction d : kDirs) {
            const Cell nb = neighbor(c, d);
            if (layout_->is_floor(nb) && region_of(nb) < 0) {
              region_[static_cast<std::size_t>(layout_->index(nb))] = regions_;
              q.push_back(nb);
            }
          }
        }
        ++regions_;
      }
    }
  }

  bool touches_cell(int region, Cell tile) const {
    for (Direction d : kDirs) {
      if (region_of(neighbor(tile, d)) == region) return true;
    }
    return false;
  }
  bool touches(int region, Tile t) const { return !tiles_touching(region, t).empty(); }

  std::vector<Cell> shared(int a, int b) const {
    std::vector<Cell> out;
    for (const Cell c : layout_->counters()) {
      if (touches_cell(a, c) && touches_cell(b, c)) out.push_back(c);
    }
    return out;
  }

  std::vector<int> region_path(int from, int to) const {
    std::vector<int> prev(static_cast<std::size_t>(regions_), -2);
    std::deque<int> q{from};
    prev[static_cast<std::size_t>(from)] = -1;
    while (!q.empty()) {
      const int r = q.front();
      q.pop_front();
      if (r == to) break;
      for (int s = 0; s < regions_; ++s) {
        if (prev[static_cast<std::size_t>(s)] == -2 && !shared(r, s).empty()) {
          prev[static_cast<std::size_t>(s)] = r;
          q.push_back(s);
        }
      }
    }
    if (prev[static_cast<std::size_t>(to)] == -2) return {};
    std::vector<int> path;
    for (int r = to; r != -1; r = prev[static_cast<std::size_t>(r)]) path.push_back(r);
    std::reverse(path.begin(), path.end());
    return path;
  }

  const Layout* layout_;
  std::vector<int> region_;
  int regions_ = 0;
  std::vector<int> chain_;
};

// Role-conditioned passing controller for pipeline kitchens: the fetcher
// ferries onions to the shared counter, passers relay them downstream, the
// cook pots, plates and serves. Fully deterministic.
class PassingHeuristic : public Controller {
 public:
  explicit PassingHeuristic(std::shared_ptr<const Layout> layout) : layout_(std::move(layout)), map_(*layout_) {}

  const PipelineMap& map() const { return map_; }
  PassingRole role_of(const WorldState& s, int agent) const { return map_.role_at(s.agents[static_cast<std::size_t>(agent)].position); }

  void act(const WorldState& s, std::span<const int> agents, std::span<Action> out, Rng&) override {
    for (std::size_t k = 0; k < agents.size(); ++k) out[k] = decide(s, agents[k]);
  }

  Action decide(const WorldState& s, int agent) const {
    const AgentState& me = s.agents[static_cast<std::size_t>(agent)];
    const int region = map_.region_of(me.position);
    const int stage = map_.stage_of_region(region);
    if (stage < 0) throw Error("eval.role", "agent " + std::to_string(agent) + " is not on the pipeline");
    const PassingRole role = map_.role_at(me.position);
    const auto up = map_.upstream_counters(stage);
    const auto down = map_.downstream_counters(stage);
    auto with_item = [&](const std::vector<Cell>& cells, Item item) {
      std::vector<Cell> r;
      for (Cell c : cells) {
        if (s.item_at(c) == item) r.push_back(c);
      }
      return r;
    };

    switch (role) {
      case PassingRole::Fetcher:
        if (me.held == Item::Nothing) return go_interact(s, agent, map_.tiles_touching(region, Tile::OnionSource));
        return go_interact(s, agent, with_item(down, Item::Nothing));
      case PassingRole::Passer:
        if (me.held == Item::Nothing) {
          const auto ready = with_item(up, Item::Onion);
          return ready.empty() ? go_near(s, agent, up) : go_interact(s, agent, ready);
        }
        return go_interact(s, agent, with_item(down, Item::Nothing));
      case PassingRole::Cook:
        return cook(s, agent, region, up);
    }
    return Action::Stay;
  }

 private:
  Action cook(const WorldState& s, int agent, int region, const std::vector<Cell>& up) const {
    const AgentState& me = s.agents[static_cast<std::size_t>(agent)];
    const auto pots = map_.tiles_touching(region, Tile::Pot);
    std::vector<Cell> ready, cooking, open;
    for (Cell c : pots) {
      const PotState* p = s.pot_at(c);
      if (p->ready) ready.push_back(c);
      else if (p->cooking()) cooking.push_back(c);
      else open.push_back(c);
    }
    switch (me.held) {
      case Item::Soup:
        return go_interact(s, agent, map_.tiles_touching(region, Tile::ServeWindow));
      case Item::Dish:
        return ready.empty() ? go_near(s, agent, cooking) : go_interact(s, agent, ready);
      case Item::Onion:
        return go_interact(s, agent, open);
      case Item::Nothing: {
        if (!ready.empty() || !cooking.empty()) return go_interact(s, agent, map_.tiles_touching(region, Tile::DishSource));
        std::vector<Cell> onions;
        for (Cell c : up) {
          if (s.item_at(c) == Item::Onion) onions.push_back(c);
        }
        return onions.empty() ? go_near(s, agent, up) : go_interact(s, agent, onions);
      }
    }
    return Action::Stay;
  }

  struct Route {
    int distance = -1;
    Action first = Action::Stay;
    Cell target;
    Cell stand;
  };

  // Shortest route (BFS inside the agent's region, other agents block) to a
  // floor cell next to one of the targets. Ties: target order, then N,S,E,W.
  std::optional<Route> route(const WorldState& s, int agent, const std::vector<Cell>& targets) const {
    if (targets.empty()) return std::nullopt;
    const Layout& L = *layout_;
    const Cell start = s.agents[static_cast<std::size_t>(agent)].position;
    std::vector<int> dist(static_cast<std::size_t>(L.width() * L.height()), -1);
    std::vector<Action> first(dist.size(), Action::Stay);
    std::deque<Cell> q{start};
    dist[static_cast<std::size_t>(L.index(start))] = 0;
    while (!q.empty()) {
      const Cell c = q.front();
      q.pop_front();
      for (Direction d : {Direction::North, Direction::South, Direction::East, Direction::West}) {
        const Cell nb = neighbor(c, d);
        if (!L.is_floor(nb) || dist[static_cast<std::size_t>(L.index(nb))] >= 0) continue;
        const int other = s.agent_at(nb);
        if (other >= 0 && other != agent) continue;
        dist[static_cast<std::size_t>(L.index(nb))] = dist[static_cast<std::size_t>(L.index(c))] + 1;
        first[static_cast<std::size_t>(L.index(nb))] = c == start ? move_action(d) : first[static_cast<std::size_t>(L.index(c))];
        q.push_back(nb);
      }
    }
    std::optional<Route> best;
    for (Cell t : targets) {
      for (Direction d : {Direction::North, Direction::South, Direction::East, Direction::West}) {
        const Cell stand = neighbor(t, d);
        if (!L.in_bounds(stand) || !L.is_floor(stand)) continue;
        const int dd = dist[static_cast<std::size_t>(L.index(stand))];
        if (dd < 0) continue;
        if (!best || dd < best->distance) best = Route{dd, first[static_cast<std::size_t>(L.index(stand))], t, stand};
      }
    }
    return best;
  }

  static Direction toward(Cell from, Cell to) {
    if (to.y < from.y) return Direction::North;
    if (to.y > from.y) return Direction::South;
    if (to.x > from.x) return Direction::East;
    return Direction::West;
  }

  // Walk next to the nearest target, turn to face it, then interact.
  Action go_interact(const WorldState& s, int agent, const std::vector<Cell>& targets) const {
    const auto r = route(s, agent, targets);
    if (!r) return Action::Stay;
    if (r->distance > 0) return r->first;
    const AgentState& me = s.agents[static_cast<std::size_t>(agent)];
    const Direction face = toward(me.position, r->target);
    return me.facing == face ? Action::Interact : move_action(face);
  }

  // Walk next to the nearest target and wait there facing it.
  Action go_near(const WorldState& s, int agent, const std::vector<Cell>& targets) const {
    const auto r = route(s, agent, targets);
    if (!r) return Action::Stay;
    if (r->distance > 0) return r->first;
    const AgentState& me = s.agents[static_cast<std::size_t>(agent)];
    const Direction face = toward(me.position, r->target);
    return me.facing == face ? Action::Stay : move_action(face);
  }

  std::shared_ptr<const Layout> layout_;
  PipelineMap map_;
};

class RandomController : public Controller {
 public:
  void act(const WorldState&, std::span<const int> agents, std::span<Action> out, Rng& rng) override {
    for (std::size_t k = 0; k < agents.size(); ++k) out[k] = kAllActions[static_cast<std::size_t>(rng.uniform_int(kNumActions))];
  }
};

}  // namespace ibts::eval
