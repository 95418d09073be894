#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ibts/env/world.hpp"

namespace ibts {

// Re-simulatable record of one episode.
//
// File format: one JSON object per line.
//   {"type":"header","version":1,"layout":...,"n":...,"seed":...,"roster":[...]}
//   {"type":"step","t":...,"actions":[...],"events":{"onion_potted":[...],"soup_picked_up":[...],"soup_delivered":[...]}}
//   ...
//   {"type":"final","score":...,"steps":...,"truncated":...}
// The final record is absent when the writer was interrupted; such a log is
// read back as a truncated prefix.
struct ReplayLog {
  static constexpr int kVersion = 1;

  int version = kVersion;
  std::string layout;
  int n = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> roster;
  std::vector<JointAction> actions;
  std::vector<RewardEvents> events;
  int final_score = 0;
  bool truncated = false;
  bool has_final = true;

  bool operator==(const ReplayLog&) const = default;
};

namespace replay_detail {

using ojson = nlohmann::ordered_json;

inline ojson header_json(const ReplayLog& log) {
  ojson h;
  h["type"] = "header";
  h["version"] = log.version;
  h["layout"] = log.layout;
  h["n"] = log.n;
  h["seed"] = log.seed;
  h["roster"] = log.roster;
  return h;
}

inline ojson step_json(int t, const JointAction& actions, const RewardEvents& events) {
  ojson s;
  s["type"] = "step";
  s["t"] = t;
  ojson acts = ojson::array();
  for (Action a : actions) acts.push_back(std::string(to_string(a)));
  s["actions"] = std::move(acts);
  s["events"]["onion_potted"] = events.onion_potted;
  s["events"]["soup_picked_up"] = events.soup_picked_up;
  s["events"]["soup_delivered"] = events.soup_delivered;
  return s;
}

inline ojson final_json(int score, int steps, bool truncated) {
  ojson f;
  f["type"] = "final";
  f["score"] = score;
  f["steps"] = steps;
  f["truncated"] = truncated;
  return f;
}

}  // namespace replay_detail

inline std::string to_text(const ReplayLog& log) {
  using namespace replay_detail;
  std::string out = header_json(log).dump() + "\n";
  for (std::size_t t = 0; t < log.actions.size(); ++t) {
    out += step_json(static_cast<int>(t), log.actions[t], log.events[t]).dump() + "\n";
  }
  if (log.has_final) out += final_json(log.final_score, static_cast<int>(log.actions.size()), log.truncated).dump() + "\n";
  return out;
}

inline ReplayLog parse_replay(std::string_view text) {
  using replay_detail::ojson;
  ReplayLog log;
  log.has_final = false;
  bool have_header = false;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const ojson j = ojson::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        log.version = j.at("version").get<int>();
        if (log.version != ReplayLog::kVersion) {
          throw Error("replay.version", "unsupported replay version " + std::to_string(log.version));
        }
        log.layout = j.at("layout").get<std::string>();
        log.n = j.at("n").get<int>();
        log.seed = j.at("seed").get<std::uint64_t>();
        log.roster = j.at("roster").get<std::vector<std::string>>();
        have_header = true;
      } else if (type == "step") {
        if (!have_header) throw Error("replay.parse", "step record before header");
        if (j.at("t").get<int>() != static_cast<int>(log.actions.size())) {
          throw Error("replay.parse", "non-contiguous step index on line " + std::to_string(line_no));
        }
        JointAction actions;
        for (const auto& a : j.at("actions")) {
          auto parsed = parse_action(a.get<std::string>());
          if (!parsed) throw Error("replay.parse", "unknown action on line " + std::to_string(line_no));
          actions.push_back(*parsed);
        }
        RewardEvents ev;
        ev.onion_potted = j.at("events").at("onion_potted").get<std::vector<int>>();
        ev.soup_picked_up = j.at("events").at("soup_picked_up").get<std::vector<int>>();
        ev.soup_delivered = j.at("events").at("soup_delivered").get<std::vector<int>>();
        log.actions.push_back(std::move(actions));
        log.events.push_back(std::move(ev));
      } else if (type == "final") {
        log.final_score = j.at("score").get<int>();
        log.truncated = j.at("truncated").get<bool>();
        log.has_final = true;
      } else {
        throw Error("replay.parse", "unknown record type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("replay.parse", "malformed replay record on line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!have_header) throw Error("replay.parse", "missing header record");
  if (!log.has_final) {
    log.truncated = true;
    log.final_score = 0;
    for (const auto& ev : log.events) log.final_score += ev.env_reward();
  }
  return log;
}

inline void save_replay(const ReplayLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("replay.io", "cannot write " + path.string());
  out << to_text(log);
}

inline ReplayLog load_replay(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("replay.io", "cannot open replay log " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_replay(ss.str());
}

// Appends records as the episode unfolds, flushing each line, so an
// interrupted episode leaves a replayable prefix.
class ReplayWriter {
 public:
  ReplayWriter(const std::filesystem::path& path, const ReplayLog& header) : out_(path, std::ios::binary) {
    if (!out_) throw Error("replay.io", "cannot write " + path.string());
    out_ << replay_detail::header_json(header).dump() << '\n';
    out_.flush();
  }

  void append(const JointAction& actions, const RewardEvents& events) {
    out_ << replay_detail::step_json(steps_++, actions, events).dump() << '\n';
    out_.flush();
  }

  void finish(int score, bool truncated) {
    out_ << replay_detail::final_json(score, steps_, truncated).dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  int steps_ = 0;
};

struct ReplayResult {
  int final_score = 0;
  std::vector<RewardEvents> events;
  WorldState final_state;
};

inline ReplayResult replay(const ReplayLog& log, std::shared_ptr<const Layout> layout) {
  if (!layout || layout->name() != log.layout) {
    throw Error("replay.layout_mismatch", "replay log refers to layout '" + log.layout + "' but '" +
                                              (layout ? layout->name() : std::string("<none>")) + "' was supplied");
  }
  if (log.n < 1 || log.n > layout->max_agents()) {
    throw Error("replay.layout_mismatch", "replay agent count " + std::to_string(log.n) + " does not fit layout '" +
                                              log.layout + "'");
  }
  if (log.actions.size() > static_cast<std::size_t>(kHorizon)) {
    throw Error("replay.too_long", "replay has " + std::to_string(log.actions.size()) + " steps, horizon is " +
                                       std::to_string(kHorizon));
  }
  ReplayResult result;
  WorldState s = reset(layout, log.n, log.seed);
  result.events.reserve(log.actions.size());
  for (const auto& a : log.actions) {
    auto r = step(s, a);
    result.events.push_back(std::move(r.events));
    s = std::move(r.state);
  }
  result.final_score = s.score;
  result.final_state = std::move(s);
  return result;
}

inline ReplayResult replay(const ReplayLog& log) { return replay(log, load_layout(log.layout)); }

struct ReplayCheck {
  bool matches = true;
  int first_mismatch_step = -1;  // -1 when events agree; equals steps when only the score differs
  int simulated_score = 0;
};

inline ReplayCheck verify_replay(const ReplayLog& log, std::shared_ptr<const Layout> layout) {
  const ReplayResult r = replay(log, std::move(layout));
  ReplayCheck check;
  check.simulated_score = r.final_score;
  if (log.events.size() != r.events.size()) {
    check.matches = false;
    check.first_mismatch_step = static_cast<int>(std::min(log.events.size(), r.events.size()));
    return check;
  }
  for (std::size_t t = 0; t < r.events.size(); ++t) {
    if (!(r.events[t] == log.events[t])) {
      check.matches = false;
      check.first_mismatch_step = static_cast<int>(t);
      return check;
    }
  }
  if (r.final_score != log.final_score) {
    check.matches = false;
    check.first_mismatch_step = static_cast<int>(r.events.size());
  }
  return check;
}

}  // namespace ibts
