#pragma once

#include <string>

#include <json.hpp>

#include "ibts/env/world.hpp"

// JSON wire format shared by the session server and browser clients.
//   client -> server: create, join, spectate, action, stop
//   server -> client: created, joined, lobby, state, step_result, game_over, error
namespace ibts::session {

using nlohmann::json;

inline char tile_char(Tile t) {
  switch (t) {
    case Tile::Floor: return ' ';
    case Tile::Counter: return 'X';
    case Tile::OnionSource: return 'O';
    case Tile::DishSource: return 'D';
    case Tile::Pot: return 'P';
    case Tile::ServeWindow: return 'S';
  }
  return '?';
}

inline json grid_json(const Layout& L) {
  json rows = json::array();
  for (int y = 0; y < L.height(); ++y) {
    std::string row;
    for (int x = 0; x < L.width(); ++x) row.push_back(tile_char(L.at({x, y})));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json state_message(const std::string& session_id, const WorldState& s) {
  const Layout& L = *s.layout;
  json agents = json::array();
  for (int i = 0; i < s.num_agents(); ++i) {
    const auto& a = s.agents[static_cast<std::size_t>(i)];
    agents.push_back({{"slot", i}, {"x", a.position.x}, {"y", a.position.y}, {"facing", to_string(a.facing)}, {"held", to_string(a.held)}});
  }
  json pots = json::array();
  for (std::size_t k = 0; k < L.pots().size(); ++k) {
    const auto& p = s.pots[k];
    pots.push_back({{"x", L.pots()[k].x}, {"y", L.pots()[k].y}, {"onions", p.onions}, {"cook_timer", p.cook_timer}, {"ready", p.ready}});
  }
  json counters = json::array();
  for (const Cell c : L.counters()) {
    if (s.item_at(c) != Item::Nothing) counters.push_back({{"x", c.x}, {"y", c.y}, {"item", to_string(s.item_at(c))}});
  }
  return {{"type", "state"}, {"session", session_id}, {"step", s.t},  {"grid", grid_json(L)}, {"agents", agents},
          {"pots", pots},    {"counters", counters},  {"score", s.score}, {"horizon", kHorizon}};
}

inline json events_json(const RewardEvents& e) {
  return {{"onion_potted", e.onion_potted}, {"soup_picked_up", e.soup_picked_up}, {"soup_delivered", e.soup_delivered}};
}

// step is the index of the step that was executed.
inline json step_result_message(int step, const RewardEvents& e, int score) {
  return {{"type", "step_result"}, {"step", step}, {"events", events_json(e)}, {"reward", e.env_reward()}, {"score", score}};
}

inline json game_over_message(int score, const std::string& replay_id, int steps, bool truncated) {
  return {{"type", "game_over"}, {"score", score}, {"replay_id", replay_id}, {"steps", steps}, {"truncated", truncated}};
}

inline json error_message(const std::string& code, const std::string& message) {
  return {{"type", "error"}, {"code", code}, {"message", message}};
}

// Parsed client action.
struct ActionMessage {
  int step = 0;
  int slot = 0;
  Action action = Action::Stay;
};

inline ActionMessage parse_action_message(const json& j) {
  try {
    ActionMessage m;
    m.step = j.at("step").get<int>();
    m.slot = j.at("slot").get<int>();
    const auto name = j.at("action").get<std::string>();
    const auto a = parse_action(name);
    if (!a) throw Error("protocol.action", "unknown action '" + name + "'");
    m.action = *a;
    return m;
  } catch (const json::exception& e) {
    throw Error("protocol.malformed", std::string("bad action message: ") + e.what());
  }
}

}  // namespace ibts::session
