#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ibts/eval/heuristic.hpp"
#include "ibts/eval/runner.hpp"
#include "ibts/eval/score_table.hpp"
#include "ibts/marl/pool.hpp"
#include "ibts/scripted.hpp"
#include "ibts/steering/distill.hpp"
#include "ibts/steering/teacher.hpp"

namespace ibts::eval {

// Who plays a set of agent slots.
//   random | heuristic | scripted (style, noise) | pool_team (pool, team)
//   teacher (checkpoint, predictor) | student (checkpoint, predictor)
struct BindingSpec {
  std::string kind = "random";
  std::vector<int> agents;  // empty: ego takes agent 0, partners take the next free agent
  std::string pool;
  int team = 0;
  std::string checkpoint;
  std::string predictor;
  int style = 0;
  double noise = 0.0;
  bool greedy = false;
  std::string name;

  std::string label() const { return name.empty() ? kind : name; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BindingSpec, kind, agents, pool, team, checkpoint, predictor, style, noise, greedy,
                                                name)

struct EvalSpec {
  std::string layout = "Cramped-2";
  int n = 2;
  std::string method;
  BindingSpec ego;
  std::vector<BindingSpec> partners;
  int episodes = 10;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int steps = kHorizon;

  std::string method_label() const { return method.empty() ? ego.label() : method; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalSpec, layout, n, method, ego, partners, episodes, seeds, steps)

inline std::filesystem::path require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw Error("eval.missing_checkpoint", what + " path is empty");
  if (!std::filesystem::exists(path)) throw Error("eval.missing_checkpoint", what + " not found: " + path);
  return path;
}

// Builds controllers from binding specs and owns everything they point
// into (loaded pools, predictors, actors). Relative checkpoint paths are
// resolved against base_dir.
class ControllerFactory {
 public:
  ControllerFactory(std::shared_ptr<const Layout> layout, int n, std::filesystem::path base_dir = {})
      : layout_(std::move(layout)), n_(n), base_(std::move(base_dir)) {}

  Controller* make(const BindingSpec& b) {
    std::unique_ptr<Controller> c;
    if (b.kind == "random") {
      c = std::make_unique<RandomController>();
    } else if (b.kind == "heuristic") {
      c = std::make_unique<PassingHeuristic>(layout_);
    } else if (b.kind == "scripted") {
      c = std::make_unique<ScriptedController>(b.style, b.noise);
    } else if (b.kind == "pool_team") {
      const auto p = pool(resolve(b.pool));
      if (b.team < 0 || b.team >= static_cast<int>(p->size())) {
        throw Error("eval.roster", "pool " + b.pool + " has no team " + std::to_string(b.team));
      }
      c = std::make_unique<PolicyController>(p->teams[static_cast<std::size_t>(b.team)], layout_, n_, b.greedy);
    } else if (b.kind == "teacher") {
      auto t = keep(std::make_shared<const steering::TeacherPolicy>(
          steering::TeacherPolicy::load(require_file(resolve(b.checkpoint), "teacher checkpoint"))));
      c = std::make_unique<steering::SteeredController>(t->actor(), *trajectory_predictor(resolve(b.predictor)), layout_, n_, b.greedy);
    } else if (b.kind == "student") {
      auto s = keep(std::make_shared<const steering::StudentPolicy>(
          steering::StudentPolicy::load(require_file(resolve(b.checkpoint), "student checkpoint"))));
      c = std::make_unique<steering::SteeredController>(s->actor(), *trajectory_predictor(resolve(b.predictor)), layout_, n_, b.greedy);
    } else {
      throw Error("eval.roster", "unknown binding kind '" + b.kind + "'");
    }
    controllers_.push_back(std::move(c));
    return controllers_.back().get();
  }

  const std::shared_ptr<const Layout>& layout() const { return layout_; }
  int n() const { return n_; }

 private:
  std::string resolve(const std::string& path) const {
    if (path.empty() || base_.empty() || std::filesystem::path(path).is_absolute()) return path;
    return (base_ / path).string();
  }

  template <class T>
  std::shared_ptr<T> keep(std::shared_ptr<T> p) {
    owned_.push_back(p);
    return p;
  }

  std::shared_ptr<const marl::TeamPool> pool(const std::string& dir) {
    auto it = pools_.find(dir);
    if (it != pools_.end()) return it->second;
    require_file((std::filesystem::path(dir) / "pool.json").string(), "team pool");
    auto p = keep(std::make_shared<const marl::TeamPool>(marl::TeamPool::load(dir)));
    if (p->n != n_) throw Error("eval.shape", "pool " + dir + " was trained for n = " + std::to_string(p->n));
    if (p->layout != layout_->name()) throw Error("eval.shape", "pool " + dir + " was trained on layout '" + p->layout + "'");
    pools_[dir] = p;
    return p;
  }

  std::shared_ptr<const predictor::TrajectoryPredictor> trajectory_predictor(const std::string& path) {
    auto p = keep(std::make_shared<const predictor::TrajectoryPredictor>(
        predictor::TrajectoryPredictor::load(require_file(path, "predictor checkpoint"))));
    if (p->num_agents() != n_) throw Error("eval.shape", "predictor " + path + " expects n = " + std::to_string(p->num_agents()));
    return p;
  }

  std::shared_ptr<const Layout> layout_;
  int n_;
  std::filesystem::path base_;
  std::vector<std::shared_ptr<const void>> owned_;
  std::map<std::string, std::shared_ptr<const marl::TeamPool>> pools_;
  std::vector<std::unique_ptr<Controller>> controllers_;
};

// Controllers for an evaluation roster: the ego binding plus partners that
// together cover every agent exactly once.
class Roster {
 public:
  Roster(const EvalSpec& spec, std::shared_ptr<const Layout> layout) : factory_(layout, spec.n) {
    const int n = spec.n;
    if (spec.episodes < 1) throw Error("eval.spec", "episodes must be >= 1");
    if (spec.seeds.empty()) throw Error("eval.spec", "at least one seed is required");
    if (n < 1 || n > layout->max_agents()) {
      throw Error("eval.roster", "n = " + std::to_string(n) + " does not fit layout '" + layout->name() + "'");
    }
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    auto claim = [&](BindingSpec b, bool ego) {
      if (b.agents.empty()) {
        int a = ego ? 0 : -1;
        if (!ego) {
          for (int i = 0; i < n && a < 0; ++i) {
            if (!taken[static_cast<std::size_t>(i)]) a = i;
          }
        }
        if (a < 0 || a >= n) throw Error("eval.roster", "roster has more members than the layout run has agents");
        b.agents = {a};
      }
      for (int a : b.agents) {
        if (a >= 0 && a < n) taken[static_cast<std::size_t>(a)] = true;
      }
      bindings_.push_back(Binding{factory_.make(b), b.agents, b.label()});
    };
    claim(spec.ego, true);
    const int ego_slots = static_cast<int>(bindings_.front().agents.size());
    for (const auto& p : spec.partners) claim(p, false);
    int partner_slots = 0;
    for (std::size_t b = 1; b < bindings_.size(); ++b) partner_slots += static_cast<int>(bindings_[b].agents.size());
    if (partner_slots != n - ego_slots) {
      throw Error("eval.roster", "partner roster covers " + std::to_string(partner_slots) + " slots, expected n - ego = " +
                                     std::to_string(n - ego_slots));
    }
    check_roster(n, bindings_);
  }

  std::span<const Binding> bindings() const { return bindings_; }

 private:
  ControllerFactory factory_;
  std::vector<Binding> bindings_;
};

struct EvalResult {
  ScoreRow row;
  std::vector<std::filesystem::path> replays;
  std::vector<std::vector<int>> scores;  // [seed][episode]
};

inline std::uint64_t episode_seed(std::uint64_t seed, int episode) { return derive_seed(seed, static_cast<std::uint64_t>(episode)); }

// Runs every (seed, episode) pair; the row holds one mean score per seed.
// With out_dir set, every episode's replay log lands in out_dir/replays and
// the row is appended to out_dir/scores.jsonl.
inline EvalResult run_eval(const EvalSpec& spec, const std::filesystem::path& out_dir = {}) {
  const auto layout = load_layout(spec.layout);
  Roster roster(spec, layout);
  EvalResult res;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir / "replays");
  std::vector<double> per_seed;
  for (const std::uint64_t seed : spec.seeds) {
    std::vector<int> scores;
    double sum = 0.0;
    for (int e = 0; e < spec.episodes; ++e) {
      std::filesystem::path path;
      if (!out_dir.empty()) {
        path = out_dir / "replays" / (spec.method_label() + "_seed" + std::to_string(seed) + "_ep" + std::to_string(e) + ".jsonl");
        res.replays.push_back(path);
      }
      const auto o = run_episode(layout, spec.n, roster.bindings(), episode_seed(seed, e), spec.steps, path);
      scores.push_back(o.score);
      sum += o.score;
    }
    res.scores.push_back(std::move(scores));
    per_seed.push_back(sum / spec.episodes);
  }
  res.row = make_row(spec.layout, spec.method_label(), per_seed, spec.episodes);
  res.row.meta = {{"n", spec.n}, {"seeds", spec.seeds}, {"spec_hash", hex64(fnv1a(nlohmann::json(spec).dump()))}};
  if (!out_dir.empty()) append_row(out_dir / "scores.jsonl", res.row);
  return res;
}

// K-sensitivity: the same pool config and seeds for every K, so each
// (K, seed) pair shares rollout randomness; only the event horizon differs.
struct KSweepConfig {
  marl::PoolConfig base;
  std::vector<int> K_values{1, 4, 7};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int eval_episodes = 8;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(KSweepConfig, base, K_values, seeds, eval_episodes)

// Final return of a trained pool: mean over teams of the evaluation return.
inline double pool_final_return(marl::TeamPool& pool, int episodes, std::uint64_t seed) {
  marl::score_team_pool(pool, episodes, derive_seed(seed, 0xe7a1));
  double s = 0.0;
  for (double r : pool.raw_scores) s += r;
  return s / static_cast<double>(pool.raw_scores.size());
}

inline ScoreTable k_sensitivity_sweep(const KSweepConfig& cfg, const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr) {
  if (cfg.K_values.empty()) throw Error("eval.sweep", "empty K set");
  if (cfg.seeds.empty()) throw Error("eval.sweep", "at least one seed is required");
  ScoreTable table;
  for (const int K : cfg.K_values) {
    std::vector<double> values;
    for (const std::uint64_t seed : cfg.seeds) {
      marl::PoolConfig pc = cfg.base;
      pc.shaping.K = K;
      pc.seed = seed;
      const auto dir = out_dir.empty() ? std::filesystem::path{} : out_dir / ("K" + std::to_string(K)) / ("seed" + std::to_string(seed));
      auto pool = marl::train_team_pool(pc, nullptr, dir);
      values.push_back(pool_final_return(pool, cfg.eval_episodes, seed));
      if (log) *log << nlohmann::json{{"K", K}, {"seed", seed}, {"final_return", values.back()}}.dump() << "\n";
    }
    auto row = make_row(cfg.base.layout, "K=" + std::to_string(K), values, cfg.eval_episodes);
    row.meta = {{"K", K}, {"seeds", cfg.seeds}};
    if (!out_dir.empty()) append_row(out_dir / "scores.jsonl", row);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// MAPPO on env reward plus a dense handoff bonus: one team, no influence or
// diversity shaping.
struct HandoffBaselineConfig {
  marl::PoolConfig base;
  double bonus = kDefaultHandoffBonus;
  int window = kDefaultHandoffWindow;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int eval_episodes = 8;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HandoffBaselineConfig, base, bonus, window, seeds, eval_episodes)

inline marl::PoolConfig handoff_pool_config(const HandoffBaselineConfig& cfg, std::uint64_t seed) {
  marl::PoolConfig pc = cfg.base;
  pc.M = 1;
  pc.shaping.lambda_inf = 0.0;
  pc.shaping.lambda_div = 0.0;
  pc.handoff_bonus = cfg.bonus;
  pc.handoff_window = cfg.window;
  pc.seed = seed;
  return pc;
}

struct HandoffBaselineResult {
  std::vector<marl::TeamPool> teams;  // one single-team pool per seed
  ScoreRow row;
};

inline HandoffBaselineResult reward_hacking_baseline(const HandoffBaselineConfig& cfg, const std::filesystem::path& out_dir = {},
                                                     std::ostream* metrics = nullptr) {
  if (cfg.seeds.empty()) throw Error("eval.baseline", "at least one seed is required");
  HandoffBaselineResult res;
  std::vector<double> values;
  for (const std::uint64_t seed : cfg.seeds) {
    const auto dir = out_dir.empty() ? std::filesystem::path{} : out_dir / ("seed" + std::to_string(seed));
    auto pool = marl::train_team_pool(handoff_pool_config(cfg, seed), metrics, dir);
    values.push_back(pool_final_return(pool, cfg.eval_episodes, seed));
    if (!dir.empty()) pool.save(dir / "pool");
    res.teams.push_back(std::move(pool));
  }
  res.row = make_row(cfg.base.layout, "MAPPO+handoff", values, cfg.eval_episodes);
  res.row.meta = {{"bonus", cfg.bonus},
                  {"window", cfg.window},
                  {"seeds", cfg.seeds},
                  {"default_bonus_and_window", cfg.bonus == kDefaultHandoffBonus && cfg.window == kDefaultHandoffWindow}};
  if (!out_dir.empty()) append_row(out_dir / "scores.jsonl", res.row);
  return res;
}

}  // namespace ibts::eval
