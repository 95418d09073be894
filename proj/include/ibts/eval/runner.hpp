#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ibts/controller.hpp"
#include "ibts/env/replay.hpp"

namespace ibts::eval {

// A controller driving a set of agents.
struct Binding {
  Controller* controller = nullptr;
  std::vector<int> agents;
  std::string name;
};

struct EpisodeOutcome {
  ReplayLog log;
  std::vector<CounterEvent> counter_events;
  int score = 0;
  int deliveries = 0;
};

// Every agent 0..n-1 must be driven by exactly one binding.
inline void check_roster(int n, std::span<const Binding> bindings) {
  std::vector<int> owner(static_cast<std::size_t>(n), -1);
  for (std::size_t b = 0; b < bindings.size(); ++b) {
    if (!bindings[b].controller) throw Error("eval.roster", "binding '" + bindings[b].name + "' has no controller");
    for (int a : bindings[b].agents) {
      if (a < 0 || a >= n) throw Error("eval.roster", "agent index " + std::to_string(a) + " outside 0.." + std::to_string(n - 1));
      if (owner[static_cast<std::size_t>(a)] >= 0) throw Error("eval.roster", "agent " + std::to_string(a) + " bound twice");
      owner[static_cast<std::size_t>(a)] = static_cast<int>(b);
    }
  }
  for (int a = 0; a < n; ++a) {
    if (owner[static_cast<std::size_t>(a)] < 0) {
      throw Error("eval.roster", "roster covers fewer agents than the layout run needs: agent " + std::to_string(a) + " unbound");
    }
  }
}

// Runs one episode to the horizon (or `steps`). Controller randomness comes
// from a stream derived from the episode seed, so outcomes are reproducible.
inline EpisodeOutcome run_episode(std::shared_ptr<const Layout> layout, int n, std::span<const Binding> bindings,
                                  std::uint64_t seed, int steps = kHorizon, const std::filesystem::path& replay_path = {}) {
  check_roster(n, bindings);
  EpisodeOutcome out;
  out.log.layout = layout->name();
  out.log.n = n;
  out.log.seed = seed;
  out.log.roster.assign(static_cast<std::size_t>(n), std::string());
  for (const auto& b : bindings) {
    for (int a : b.agents) out.log.roster[static_cast<std::size_t>(a)] = b.name;
  }
  std::optional<ReplayWriter> writer;
  if (!replay_path.empty()) writer.emplace(replay_path, out.log);

  Rng rng(derive_seed(seed, 0x7e57));
  WorldState s = reset(layout, n, seed);
  for (const auto& b : bindings) b.controller->reset(s);
  JointAction joint(static_cast<std::size_t>(n), Action::Stay);
  std::vector<Action> part;
  const int horizon = std::min(steps, kHorizon);
  for (int t = 0; t < horizon; ++t) {
    for (const auto& b : bindings) {
      part.assign(b.agents.size(), Action::Stay);
      b.controller->act(s, b.agents, part, rng);
      for (std::size_t k = 0; k < b.agents.size(); ++k) joint[static_cast<std::size_t>(b.agents[k])] = part[k];
    }
    StepResult r = step(s, joint);
    for (const auto& b : bindings) b.controller->observe(s, joint);
    out.deliveries += r.events.total_soup_delivered();
    out.counter_events.insert(out.counter_events.end(), r.counter_events.begin(), r.counter_events.end());
    if (writer) writer->append(joint, r.events);
    out.log.actions.push_back(joint);
    out.log.events.push_back(std::move(r.events));
    s = std::move(r.state);
  }
  out.score = s.score;
  out.log.final_score = s.score;
  out.log.truncated = horizon < kHorizon;
  if (writer) writer->finish(s.score, out.log.truncated);
  return out;
}

}  // namespace ibts::eval
