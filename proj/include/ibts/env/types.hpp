#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace ibts {

inline constexpr int kHorizon = 400;
inline constexpr int kNumActions = 6;

// Order matters: it is the canonical tie-break order for salient actions.
enum class Action : std::uint8_t { North, South, East, West, Stay, Interact };

inline constexpr std::array<Action, kNumActions> kAllActions = {
    Action::North, Action::South, Action::East, Action::West, Action::Stay, Action::Interact};

enum class Direction : std::uint8_t { North, South, East, West };

enum class Item : std::uint8_t { Nothing, Onion, Dish, Soup };

enum class Tile : std::uint8_t { Floor, Counter, OnionSource, DishSource, Pot, ServeWindow };

using JointAction = std::vector<Action>;

struct Cell {
  int x = 0;
  int y = 0;
  auto operator<=>(const Cell&) const = default;
};

inline Cell neighbor(Cell c, Direction d) {
  switch (d) {
    case Direction::North: return {c.x, c.y - 1};
    case Direction::South: return {c.x, c.y + 1};
    case Direction::East: return {c.x + 1, c.y};
    case Direction::West: return {c.x - 1, c.y};
  }
  return c;
}

inline int manhattan(Cell a, Cell b) {
  return (a.x > b.x ? a.x - b.x : b.x - a.x) + (a.y > b.y ? a.y - b.y : b.y - a.y);
}

inline std::optional<Direction> movement_direction(Action a) {
  switch (a) {
    case Action::North: return Direction::North;
    case Action::South: return Direction::South;
    case Action::East: return Direction::East;
    case Action::West: return Direction::West;
    default: return std::nullopt;
  }
}

inline Action move_action(Direction d) { return static_cast<Action>(static_cast<int>(d)); }

inline int index_of(Action a) { return static_cast<int>(a); }

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::North: return "north";
    case Action::South: return "south";
    case Action::East: return "east";
    case Action::West: return "west";
    case Action::Stay: return "stay";
    case Action::Interact: return "interact";
  }
  return "?";
}

inline std::optional<Action> parse_action(std::string_view s) {
  for (Action a : kAllActions) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

inline std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::North: return "north";
    case Direction::South: return "south";
    case Direction::East: return "east";
    case Direction::West: return "west";
  }
  return "?";
}

inline std::string_view to_string(Item i) {
  switch (i) {
    case Item::Nothing: return "nothing";
    case Item::Onion: return "onion";
    case Item::Dish: return "dish";
    case Item::Soup: return "soup";
  }
  return "?";
}

inline std::string_view to_string(Tile t) {
  switch (t) {
    case Tile::Floor: return "floor";
    case Tile::Counter: return "counter";
    case Tile::OnionSource: return "onion_source";
    case Tile::DishSource: return "dish_source";
    case Tile::Pot: return "pot";
    case Tile::ServeWindow: return "serve_window";
  }
  return "?";
}

}  // namespace ibts
