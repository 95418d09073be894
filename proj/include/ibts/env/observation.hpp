#pragma once

#include <array>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "ibts/env/world.hpp"

namespace ibts {

// Fixed-width, layout-parametric featurization of one agent's view.
//
// Layout of the vector (in order):
//   ego x one-hot [W], ego y one-hot [H], ego facing [4], ego held [4],
//   faced-cell kind [8] (floor, floor+agent, empty counter, loaded counter,
//     onion source, dish source, pot, serve window),
//   per teammate j = i+1 .. i+n-1 (mod n): dx/W, dy/H, facing [4], held [4],
//   per pot (layout order): dx/W, dy/H, onions/3, cooking, timer/cook_time, ready,
//   nearest onion source, dish source, pot, serve window: dx/W, dy/H each,
//   nearest counter holding onion, dish, soup: present, dx/W, dy/H each,
//   nearest empty counter: present, dx/W, dy/H,
//   t/H.
// "Nearest" is Manhattan distance with row-major tie-breaking.
class ObservationEncoder {
 public:
  struct Offsets {
    int ego_x, ego_y, ego_facing, ego_held, faced_cell, teammates, pots, stations, counter_items, empty_counter,
        time, width;
  };

  ObservationEncoder(std::shared_ptr<const Layout> layout, int num_agents)
      : layout_(std::move(layout)), n_(num_agents) {
    if (n_ < 1 || n_ > layout_->max_agents()) throw Error("env.observation", "agent count out of range for layout");
    int w = 0;
    auto take = [&w](int k) {
      const int at = w;
      w += k;
      return at;
    };
    off_.ego_x = take(layout_->width());
    off_.ego_y = take(layout_->height());
    off_.ego_facing = take(4);
    off_.ego_held = take(4);
    off_.faced_cell = take(8);
    off_.teammates = take(10 * (n_ - 1));
    off_.pots = take(6 * static_cast<int>(layout_->pots().size()));
    off_.stations = take(8);
    off_.counter_items = take(9);
    off_.empty_counter = take(3);
    off_.time = take(1);
    off_.width = w;
  }

  int width() const { return off_.width; }
  int num_agents() const { return n_; }
  const Offsets& offsets() const { return off_; }
  const std::shared_ptr<const Layout>& layout() const { return layout_; }

  void encode(const WorldState& s, int agent, std::span<double> out) const {
    if (agent < 0 || agent >= s.num_agents()) {
      throw Error("env.observation", "agent index " + std::to_string(agent) + " out of range");
    }
    if (s.num_agents() != n_ || s.layout->name() != layout_->name() || out.size() != static_cast<std::size_t>(width())) {
      throw Error("env.observation", "state/encoder shape mismatch");
    }
    std::fill(out.begin(), out.end(), 0.0);
    const Layout& L = *layout_;
    const double inv_w = 1.0 / L.width();
    const double inv_h = 1.0 / L.height();
    const AgentState& ego = s.agents[static_cast<std::size_t>(agent)];
    auto set = [&out](int idx, double v) { out[static_cast<std::size_t>(idx)] = v; };
    auto rel = [&](int idx, Cell c) {
      set(idx, (c.x - ego.position.x) * inv_w);
      set(idx + 1, (c.y - ego.position.y) * inv_h);
    };

    set(off_.ego_x + ego.position.x, 1.0);
    set(off_.ego_y + ego.position.y, 1.0);
    set(off_.ego_facing + static_cast<int>(ego.facing), 1.0);
    set(off_.ego_held + static_cast<int>(ego.held), 1.0);

    const Cell faced = neighbor(ego.position, ego.facing);
    int kind = 0;
    switch (L.at(faced)) {
      case Tile::Floor: kind = s.agent_at(faced) >= 0 ? 1 : 0; break;
      case Tile::Counter: kind = s.item_at(faced) == Item::Nothing ? 2 : 3; break;
      case Tile::OnionSource: kind = 4; break;
      case Tile::DishSource: kind = 5; break;
      case Tile::Pot: kind = 6; break;
      case Tile::ServeWindow: kind = 7; break;
    }
    set(off_.faced_cell + kind, 1.0);

    for (int k = 1; k < n_; ++k) {
      const AgentState& mate = s.agents[static_cast<std::size_t>((agent + k) % n_)];
      const int base = off_.teammates + 10 * (k - 1);
      rel(base, mate.position);
      set(base + 2 + static_cast<int>(mate.facing), 1.0);
      set(base + 6 + static_cast<int>(mate.held), 1.0);
    }

    for (std::size_t p = 0; p < L.pots().size(); ++p) {
      const int base = off_.pots + 6 * static_cast<int>(p);
      const PotState& pot = s.pots[p];
      rel(base, L.pots()[p]);
      set(base + 2, pot.onions / 3.0);
      set(base + 3, pot.cooking() ? 1.0 : 0.0);
      set(base + 4, pot.cooking() ? static_cast<double>(pot.cook_timer) / L.cook_time() : 0.0);
      set(base + 5, pot.ready ? 1.0 : 0.0);
    }

    const std::array<Tile, 4> stations = {Tile::OnionSource, Tile::DishSource, Tile::Pot, Tile::ServeWindow};
    for (std::size_t k = 0; k < stations.size(); ++k) {
      const Cell* best = nearest(L.cells_of(stations[k]), ego.position, [](Cell) { return true; });
      if (best) rel(off_.stations + 2 * static_cast<int>(k), *best);
    }

    const std::array<Item, 3> items = {Item::Onion, Item::Dish, Item::Soup};
    for (std::size_t k = 0; k < items.size(); ++k) {
      const Item want = items[k];
      const Cell* best = nearest(L.counters(), ego.position, [&](Cell c) { return s.item_at(c) == want; });
      if (best) {
        const int base = off_.counter_items + 3 * static_cast<int>(k);
        set(base, 1.0);
        rel(base + 1, *best);
      }
    }
    if (const Cell* best = nearest(L.counters(), ego.position, [&](Cell c) { return s.item_at(c) == Item::Nothing; })) {
      set(off_.empty_counter, 1.0);
      rel(off_.empty_counter + 1, *best);
    }
    set(off_.time, static_cast<double>(s.t) / kHorizon);
  }

  std::vector<double> encode(const WorldState& s, int agent) const {
    std::vector<double> out(static_cast<std::size_t>(width()));
    encode(s, agent, out);
    return out;
  }

 private:
  template <typename Pred>
  static const Cell* nearest(const std::vector<Cell>& cells, Cell from, Pred pred) {
    const Cell* best = nullptr;
    int best_d = std::numeric_limits<int>::max();
    for (const Cell& c : cells) {
      if (!pred(c)) continue;
      const int d = manhattan(c, from);
      if (d < best_d) {
        best_d = d;
        best = &c;
      }
    }
    return best;
  }

  std::shared_ptr<const Layout> layout_;
  int n_;
  Offsets off_{};
};

}  // namespace ibts
