#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ibts/eval/harness.hpp"
#include "ibts/session/protocol.hpp"

namespace ibts::session {

// A message for one client.
struct Outgoing {
  std::string client;
  json message;
};
using Outbox = std::vector<Outgoing>;

struct SessionOptions {
  std::uint64_t seed = 1;
  std::filesystem::path replay_dir = "replays";
  std::filesystem::path checkpoint_dir;  // base for relative checkpoint paths
  int max_steps = kHorizon;
};

// One synchronous-stepping episode. Slots bound to kind "human" wait for a
// client; every other slot is driven server-side by a controller. The world
// advances exactly once per complete action set, and machine actions are
// computed as soon as a state is published but wait at the same barrier.
// Single-writer: callers serialize all calls.
class Session {
 public:
  enum class Status { Lobby, Running, Finished };

  Session(std::string id, const std::string& layout_name, int n, const std::vector<eval::BindingSpec>& slots,
          SessionOptions opts = {})
      : id_(std::move(id)), opts_(std::move(opts)), layout_(load_layout(layout_name)), n_(n),
        factory_(layout_, n, opts_.checkpoint_dir), rng_(derive_seed(opts_.seed, 0x5e55)) {
    if (n < 1 || n > layout_->max_agents()) {
      throw Error("session.bindings", "n = " + std::to_string(n) + " does not fit layout '" + layout_name + "'");
    }
    if (static_cast<int>(slots.size()) != n) {
      throw Error("session.bindings", std::to_string(slots.size()) + " slot bindings for a " + std::to_string(n) + "-agent session");
    }
    if (opts_.max_steps < 1 || opts_.max_steps > kHorizon) throw Error("session.bindings", "max_steps must be in 1..400");
    machines_.assign(static_cast<std::size_t>(n), nullptr);
    humans_.assign(static_cast<std::size_t>(n), std::string());
    names_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto& b = slots[static_cast<std::size_t>(i)];
      names_[static_cast<std::size_t>(i)] = b.label();
      if (b.kind == "human") {
        human_slot_.push_back(i);
      } else {
        machines_[static_cast<std::size_t>(i)] = factory_.make(b);
      }
    }
    state_ = reset(layout_, n, opts_.seed);
    pending_.assign(static_cast<std::size_t>(n), std::nullopt);
    if (human_slot_.empty()) throw Error("session.bindings", "a session needs at least one human slot");
  }

  const std::string& id() const { return id_; }
  Status status() const { return status_; }
  const WorldState& state() const { return state_; }
  int n() const { return n_; }
  long steps_executed() const { return steps_executed_; }
  long complete_sets() const { return complete_sets_; }
  long duplicates() const { return duplicates_; }
  int pending_count() const {
    int c = 0;
    for (const auto& p : pending_) c += p.has_value();
    return c;
  }
  bool is_human(int slot) const { return machines_.at(static_cast<std::size_t>(slot)) == nullptr; }
  int humans_joined() const {
    int c = 0;
    for (int s : human_slot_) c += !humans_[static_cast<std::size_t>(s)].empty();
    return c;
  }
  // Every action message received, accepted or not: {client, slot, step, action, result}.
  const std::vector<json>& audit() const { return audit_; }
  const ReplayLog& log() const { return log_; }
  std::filesystem::path replay_path() const { return opts_.replay_dir / (id_ + ".jsonl"); }
  std::set<std::string> clients() const {
    std::set<std::string> c(spectators_.begin(), spectators_.end());
    for (const auto& h : humans_) {
      if (!h.empty()) c.insert(h);
    }
    return c;
  }

  Outbox join(const std::string& client, int slot) {
    Outbox out;
    if (status_ == Status::Finished) throw Error("session.finished", "session " + id_ + " is finished");
    if (slot < 0 || slot >= n_) throw Error("session.slot", "no slot " + std::to_string(slot) + " in session " + id_);
    if (!is_human(slot)) throw Error("session.slot", "slot " + std::to_string(slot) + " is played by a machine agent");
    auto& holder = humans_[static_cast<std::size_t>(slot)];
    if (!holder.empty() && holder != client && !disconnected_.count(holder)) {
      throw Error("session.slot_taken", "slot " + std::to_string(slot) + " is already taken");
    }
    for (int s : human_slot_) {
      if (s != slot && humans_[static_cast<std::size_t>(s)] == client) throw Error("session.slot", "client already holds slot " + std::to_string(s));
    }
    if (!holder.empty()) disconnected_.erase(holder);
    holder = client;
    out.push_back({client, {{"type", "joined"}, {"session", id_}, {"slot", slot}, {"n", n_}, {"layout", layout_->name()}}});
    if (status_ == Status::Running) {
      out.push_back({client, state_message(id_, state_)});
      return out;
    }
    const int waiting = static_cast<int>(human_slot_.size()) - humans_joined();
    if (waiting > 0) {
      broadcast(out, {{"type", "lobby"}, {"session", id_}, {"waiting_for", waiting}});
      return out;
    }
    start(out);
    return out;
  }

  Outbox spectate(const std::string& client) {
    Outbox out;
    spectators_.insert(client);
    out.push_back({client, {{"type", "spectating"}, {"session", id_}}});
    if (status_ != Status::Lobby) out.push_back({client, state_message(id_, state_)});
    return out;
  }

  Outbox submit(const std::string& client, const ActionMessage& m) {
    Outbox out;
    json entry{{"client", client}, {"slot", m.slot}, {"step", m.step}, {"action", to_string(m.action)}};
    auto reject = [&](const std::string& code, const std::string& message) {
      entry["result"] = code;
      audit_.push_back(entry);
      throw Error(code, message);
    };
    if (status_ == Status::Lobby) reject("session.not_running", "session " + id_ + " has not started");
    if (status_ == Status::Finished) reject("session.finished", "session " + id_ + " is finished");
    if (m.slot < 0 || m.slot >= n_ || !is_human(m.slot) || humans_[static_cast<std::size_t>(m.slot)] != client) {
      reject("session.not_your_slot", "slot " + std::to_string(m.slot) + " is not held by this client");
    }
    if (m.step != state_.t) {
      reject("session.stale_step", "action for step " + std::to_string(m.step) + " rejected; current step is " + std::to_string(state_.t));
    }
    auto& p = pending_[static_cast<std::size_t>(m.slot)];
    if (p) {
      ++duplicates_;
      entry["result"] = "replaced";
    } else {
      entry["result"] = "accepted";
    }
    audit_.push_back(entry);
    p = m.action;
    advance_if_complete(out);
    return out;
  }

  // Fills absent human actions with stay (optional step timeout).
  Outbox timeout_absent() {
    Outbox out;
    if (status_ != Status::Running) return out;
    for (int s : human_slot_) {
      if (!pending_[static_cast<std::size_t>(s)]) {
        pending_[static_cast<std::size_t>(s)] = Action::Stay;
        audit_.push_back({{"client", humans_[static_cast<std::size_t>(s)]}, {"slot", s}, {"step", state_.t}, {"action", "stay"}, {"result", "timeout"}});
      }
    }
    advance_if_complete(out);
    return out;
  }

  // Administrative stop: the log keeps the steps played so far, flagged truncated.
  Outbox stop() {
    Outbox out;
    if (status_ == Status::Finished) return out;
    finish(out, true);
    return out;
  }

  Outbox disconnect(const std::string& client) {
    spectators_.erase(client);
    for (int s : human_slot_) {
      auto& h = humans_[static_cast<std::size_t>(s)];
      if (h != client) continue;
      if (status_ == Status::Lobby) {
        h.clear();
      } else {
        disconnected_.insert(client);
      }
    }
    return {};
  }

 private:
  void broadcast(Outbox& out, const json& msg) const {
    for (const auto& c : clients()) {
      if (!disconnected_.count(c)) out.push_back({c, msg});
    }
  }

  void start(Outbox& out) {
    status_ = Status::Running;
    std::filesystem::create_directories(opts_.replay_dir);
    log_.layout = layout_->name();
    log_.n = n_;
    log_.seed = opts_.seed;
    log_.roster = names_;
    writer_.emplace(replay_path(), log_);
    for (auto* m : machines_) {
      if (m) m->reset(state_);
    }
    publish(out);
  }

  // Broadcasts the current state and queues machine actions for it.
  void publish(Outbox& out) {
    broadcast(out, state_message(id_, state_));
    for (int i = 0; i < n_; ++i) {
      Controller* m = machines_[static_cast<std::size_t>(i)];
      if (!m) continue;
      Action a = Action::Stay;
      const int agent = i;
      m->act(state_, std::span<const int>(&agent, 1), std::span<Action>(&a, 1), rng_);
      pending_[static_cast<std::size_t>(i)] = a;
    }
  }

  void advance_if_complete(Outbox& out) {
    for (const auto& p : pending_) {
      if (!p) return;
    }
    ++complete_sets_;
    JointAction joint(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) joint[static_cast<std::size_t>(i)] = *pending_[static_cast<std::size_t>(i)];
    pending_.assign(static_cast<std::size_t>(n_), std::nullopt);
    StepResult r = step(state_, joint);
    ++steps_executed_;
    for (auto* m : machines_) {
      if (m) m->observe(state_, joint);
    }
    const int executed = state_.t;
    writer_->append(joint, r.events);
    log_.actions.push_back(joint);
    log_.events.push_back(r.events);
    state_ = std::move(r.state);
    broadcast(out, step_result_message(executed, log_.events.back(), state_.score));
    if (state_.t >= opts_.max_steps) {
      finish(out, opts_.max_steps < kHorizon);
      return;
    }
    publish(out);
  }

  void finish(Outbox& out, bool truncated) {
    if (!writer_) {
      std::filesystem::create_directories(opts_.replay_dir);
      log_.layout = layout_->name();
      log_.n = n_;
      log_.seed = opts_.seed;
      log_.roster = names_;
      writer_.emplace(replay_path(), log_);
    }
    log_.final_score = state_.score;
    log_.truncated = truncated;
    writer_->finish(state_.score, truncated);
    status_ = Status::Finished;
    pending_.assign(static_cast<std::size_t>(n_), std::nullopt);
    broadcast(out, state_message(id_, state_));
    broadcast(out, game_over_message(state_.score, id_, static_cast<int>(log_.actions.size()), truncated));
  }

  std::string id_;
  SessionOptions opts_;
  std::shared_ptr<const Layout> layout_;
  int n_;
  eval::ControllerFactory factory_;
  Rng rng_;
  Status status_ = Status::Lobby;
  WorldState state_;
  std::vector<Controller*> machines_;
  std::vector<int> human_slot_;
  std::vector<std::string> humans_;
  std::vector<std::string> names_;
  std::set<std::string> spectators_;
  std::set<std::string> disconnected_;
  std::vector<std::optional<Action>> pending_;
  std::optional<ReplayWriter> writer_;
  ReplayLog log_;
  std::vector<json> audit_;
  long steps_executed_ = 0;
  long complete_sets_ = 0;
  long duplicates_ = 0;
};

struct CreateRequest {
  std::string session;
  std::string layout;
  int n = 0;
  std::vector<eval::BindingSpec> slots;
  std::uint64_t seed = 1;
  int max_steps = kHorizon;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CreateRequest, session, layout, n, slots, seed, max_steps)

// Routes wire messages from clients to sessions. Each client plays in or
// watches at most one session at a time.
class SessionManager {
 public:
  explicit SessionManager(std::filesystem::path replay_dir = "replays", std::filesystem::path checkpoint_dir = {})
      : replay_dir_(std::move(replay_dir)), checkpoint_dir_(std::move(checkpoint_dir)) {}

  Session& create(const CreateRequest& req) {
    std::string id = req.session.empty() ? "s" + std::to_string(++counter_) : req.session;
    if (sessions_.count(id)) throw Error("session.exists", "session " + id + " already exists");
    if (id.find_first_of("/\\.") != std::string::npos) throw Error("session.id", "session id may not contain path separators or dots");
    SessionOptions opts;
    opts.seed = req.seed;
    opts.replay_dir = replay_dir_;
    opts.checkpoint_dir = checkpoint_dir_;
    opts.max_steps = req.max_steps;
    auto s = std::make_unique<Session>(id, req.layout, req.n, req.slots, opts);
    return *sessions_.emplace(id, std::move(s)).first->second;
  }

  std::vector<Session*> sessions() {
    std::vector<Session*> out;
    for (auto& [id, s] : sessions_) out.push_back(s.get());
    return out;
  }

  Session* find(const std::string& id) {
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second.get();
  }

  // Handles one client message; errors become an error message to that client.
  Outbox handle(const std::string& client, const std::string& text) {
    try {
      json j;
      try {
        j = json::parse(text);
      } catch (const json::exception& e) {
        throw Error("protocol.malformed", std::string("not JSON: ") + e.what());
      }
      if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) throw Error("protocol.malformed", "message needs a string \"type\"");
      return dispatch(client, j);
    } catch (const Error& e) {
      return {{client, error_message(e.code(), e.what())}};
    } catch (const json::exception& e) {
      return {{client, error_message("protocol.malformed", e.what())}};
    }
  }

  Outbox disconnect(const std::string& client) {
    auto it = membership_.find(client);
    if (it == membership_.end()) return {};
    Outbox out;
    if (Session* s = find(it->second)) out = s->disconnect(client);
    membership_.erase(it);
    return out;
  }

 private:
  Session& session_for(const std::string& client, const json& j) {
    std::string id;
    if (j.contains("session")) {
      id = j.at("session").get<std::string>();
    } else if (auto it = membership_.find(client); it != membership_.end()) {
      id = it->second;
    }
    Session* s = find(id);
    if (!s) throw Error("session.unknown", "unknown session '" + id + "'");
    return *s;
  }

  Outbox dispatch(const std::string& client, const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "create") {
      Session& s = create(j.get<CreateRequest>());
      return {{client, {{"type", "created"}, {"session", s.id()}, {"n", s.n()}}}};
    }
    if (type == "join") {
      Session& s = session_for(client, j);
      auto out = s.join(client, j.at("slot").get<int>());
      membership_[client] = s.id();
      return out;
    }
    if (type == "spectate") {
      Session& s = session_for(client, j);
      membership_[client] = s.id();
      return s.spectate(client);
    }
    if (type == "action") return session_for(client, j).submit(client, parse_action_message(j));
    if (type == "stop") return session_for(client, j).stop();
    throw Error("protocol.type", "unknown message type '" + type + "'");
  }

  std::filesystem::path replay_dir_;
  std::filesystem::path checkpoint_dir_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
  std::map<std::string, std::string> membership_;
  long counter_ = 0;
};

}  // namespace ibts::session
