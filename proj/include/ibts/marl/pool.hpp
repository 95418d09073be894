#pragma once

#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>

#include <json.hpp>

#include "ibts/eval/handoff.hpp"
#include "ibts/marl/rollout.hpp"
#include "ibts/shaping/features.hpp"
#include "ibts/shaping/influence.hpp"
#include "ibts/shaping/rewards.hpp"
#include "ibts/util/hash.hpp"
#include "ibts/util/version.hpp"

namespace ibts::marl {

struct PoolConfig {
  std::string layout = "Cramped-2";
  int n = 2;
  int M = 5;
  long chunk_steps = 50000;  // environment steps per team per chunk
  int cycles = 6;
  std::uint64_t seed = 1;
  PPOConfig ppo;
  shaping::ShapingWeights shaping;
  shaping::InfluenceConfig influence;
  int eval_episodes = 8;
  // Dense bonus per counter handoff (place by one agent, pick by another
  // within handoff_window steps); 0 disables it.
  double handoff_bonus = 0.0;
  int handoff_window = 4;

  void validate() const {
    // A single team is plain MAPPO; diversity needs a population.
    if (M < 1 || (M < 2 && shaping.lambda_div > 0.0)) throw Error("config.pool", "team pool needs M >= 2 (M = 1 only without diversity)");
    if (handoff_bonus < 0.0 || handoff_window < 0) throw Error("config.pool", "handoff bonus and window must be >= 0");
    if (chunk_steps < 1 || cycles < 1) throw Error("config.pool", "chunk_steps and cycles must be >= 1");
    if (eval_episodes < 1) throw Error("config.pool", "eval_episodes must be >= 1");
    ppo.validate();
    shaping.validate();
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PoolConfig, layout, n, M, chunk_steps, cycles, seed, ppo, shaping,
                                                influence, eval_episodes, handoff_bonus, handoff_window)

inline std::uint64_t config_hash(const nlohmann::json& j) { return fnv1a(j.dump()); }

// Min-max normalization to [0,1]; an all-equal pool maps to all ones.
inline std::vector<double> normalize_scores(const std::vector<double>& raw) {
  if (raw.empty()) throw Error("pool.score", "no scores to normalize");
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  std::vector<double> s(raw.size(), 1.0);
  if (*hi - *lo <= 0.0) return s;
  for (std::size_t m = 0; m < raw.size(); ++m) s[m] = (raw[m] - *lo) / (*hi - *lo);
  return s;
}

struct TeamPool {
  std::string layout;
  int n = 0;
  std::vector<ActorCritic> teams;
  std::vector<double> raw_scores;
  std::vector<double> scores;
  std::vector<long> steps_trained;

  std::size_t size() const { return teams.size(); }
  std::vector<const TeamPolicy*> policies() const {
    std::vector<const TeamPolicy*> out;
    for (const auto& t : teams) out.push_back(&t);
    return out;
  }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::json j{{"layout", layout}, {"n", n}, {"M", teams.size()}, {"raw_scores", raw_scores},
                     {"scores", scores}, {"steps_trained", steps_trained}, {"teams", nlohmann::json::array()}};
    for (std::size_t m = 0; m < teams.size(); ++m) {
      const std::string file = "team_" + std::to_string(m) + ".ckpt";
      teams[m].save(dir / file, {{"team", m}});
      j["teams"].push_back({{"file", file}, {"hash", hex64(teams[m].hash())}});
    }
    std::ofstream(dir / "pool.json") << j.dump(2) << "\n";
  }

  static TeamPool load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "pool.json");
    if (!in) throw Error("pool.io", "no pool.json in " + dir.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error("pool.io", std::string("bad pool.json: ") + e.what());
    }
    TeamPool p;
    p.layout = j.at("layout").get<std::string>();
    p.n = j.at("n").get<int>();
    p.raw_scores = j.value("raw_scores", std::vector<double>{});
    p.scores = j.value("scores", std::vector<double>{});
    p.steps_trained = j.value("steps_trained", std::vector<long>{});
    for (const auto& t : j.at("teams")) p.teams.push_back(ActorCritic::load(dir / t.at("file").get<std::string>()));
    return p;
  }
};

// Rewards for one collected rollout under influence shaping; per row and
// agent (rows x n), plus the team reward written into buf.rewards.
struct ShapedRewards {
  Matrix r_inf;
  Matrix r_div;
  Matrix total;
};

// Event labels over a rollout buffer: windows never cross an episode end or
// the end of the buffer.
inline std::vector<std::uint8_t> rollout_event_labels(const RolloutBuffer& buf, const std::vector<Action>& salient, int K) {
  const int n = buf.n_agents;
  std::vector<std::uint8_t> labels(buf.rows() * static_cast<std::size_t>(n), 0);
  for (int e = 0; e < buf.n_envs; ++e) {
    int start = 0;
    while (start < buf.n_steps) {
      int end = start;
      while (end < buf.n_steps - 1 && !buf.dones[buf.row(end, e)]) ++end;
      std::vector<JointAction> actions;
      std::vector<Action> sal;
      for (int t = start; t <= end; ++t) {
        const std::size_t r = buf.row(t, e);
        JointAction j(static_cast<std::size_t>(n));
        for (int a = 0; a < n; ++a) j[static_cast<std::size_t>(a)] = kAllActions[static_cast<std::size_t>(buf.joint_actions[r * static_cast<std::size_t>(n) + static_cast<std::size_t>(a)])];
        actions.push_back(std::move(j));
        sal.push_back(salient[r]);
      }
      const auto y = shaping::event_labels(actions, sal, K);
      for (int t = start; t <= end; ++t) {
        for (int a = 0; a < n; ++a) {
          labels[buf.row(t, e) * static_cast<std::size_t>(n) + static_cast<std::size_t>(a)] = y[static_cast<std::size_t>(t - start)][static_cast<std::size_t>(a)];
        }
      }
      start = end + 1;
    }
  }
  return labels;
}

struct ChunkReport {
  int team = 0;
  int chunk = 0;
  int cycle = 0;
  int updates = 0;
  long env_steps = 0;
  bool diversity_active = false;
  double mean_r_inf = 0.0;
  double mean_r_div = 0.0;
  double max_div_contribution = 0.0;  // max |lambda_div * r_div| applied
  long handoffs = 0;
  double mean_episode_return = std::numeric_limits<double>::quiet_NaN();
  UpdateStats last_update;
};

// Round-robin Stage-1 trainer: teams are visited in index order, one chunk
// at a time, and only the active team's parameters and predictors change.
class PoolTrainer {
 public:
  explicit PoolTrainer(PoolConfig cfg, std::ostream* metrics = nullptr, std::filesystem::path checkpoint_dir = {})
      : cfg_(std::move(cfg)), metrics_(metrics), dir_(std::move(checkpoint_dir)) {
    cfg_.validate();
    layout_ = load_layout(cfg_.layout);
    if (cfg_.n < 2 || cfg_.n > layout_->max_agents()) throw Error("config.pool", "agent count out of range for layout");
    enc_ = std::make_unique<ObservationEncoder>(layout_, cfg_.n);
    const CriticEncoder critic(*enc_);
    pool_.layout = layout_->name();
    pool_.n = cfg_.n;
    pool_.steps_trained.assign(static_cast<std::size_t>(cfg_.M), 0);
    const ActorCritic::Dims dims{cfg_.n, enc_->width(), critic.width(), cfg_.ppo.hidden};
    for (int m = 0; m < cfg_.M; ++m) {
      Rng init(derive_seed(cfg_.seed, 100 + static_cast<std::uint64_t>(m)));
      pool_.teams.emplace_back(dims, cfg_.ppo.lr, init, "team" + std::to_string(m));
      predictors_.emplace_back(cfg_.n, cfg_.n * enc_->width(), cfg_.influence, init);
      rngs_.emplace_back(derive_seed(cfg_.seed, 200 + static_cast<std::uint64_t>(m)));
      running_return_.emplace_back(static_cast<std::size_t>(cfg_.ppo.n_envs), 0.0);
      detectors_.emplace_back(static_cast<std::size_t>(cfg_.ppo.n_envs), eval::HandoffDetector(cfg_.handoff_window));
    }
    for (int m = 0; m < cfg_.M; ++m) {
      venvs_.emplace_back(layout_, cfg_.n, cfg_.ppo.n_envs, derive_seed(cfg_.seed, 300 + static_cast<std::uint64_t>(m)));
    }
    if (!dir_.empty()) {
      std::filesystem::create_directories(dir_);
      manifest_ = {{"config", cfg_},
                   {"config_hash", hex64(config_hash(cfg_))},
                   {"version", version()},
                   {"seed", cfg_.seed},
                   {"chunks", nlohmann::json::array()}};
    }
  }

  const PoolConfig& config() const { return cfg_; }
  const TeamPool& pool() const { return pool_; }
  TeamPool& pool() { return pool_; }
  int total_chunks() const { return cfg_.M * cfg_.cycles; }
  int chunks_done() const { return chunk_; }
  bool done() const { return chunk_ >= total_chunks(); }
  int next_team() const { return chunk_ % cfg_.M; }
  int updates_per_chunk() const {
    const long per_update = static_cast<long>(cfg_.ppo.n_envs) * cfg_.ppo.n_steps;
    return static_cast<int>((cfg_.chunk_steps + per_update - 1) / per_update);
  }
  const shaping::InfluencePredictors& predictors(int m) const { return predictors_[static_cast<std::size_t>(m)]; }

  ChunkReport run_chunk() {
    if (done()) throw Error("train.schedule", "training schedule already complete");
    ChunkReport rep;
    rep.team = next_team();
    rep.chunk = chunk_;
    rep.cycle = chunk_ / cfg_.M;
    rep.diversity_active = rep.cycle >= 1;
    shaping::ShapingWeights w = cfg_.shaping;
    w.diversity_active = rep.diversity_active;
    double inf_sum = 0.0, div_sum = 0.0, cells = 0.0, ret_sum = 0.0;
    long episodes = 0;
    for (int u = 0; u < updates_per_chunk(); ++u) {
      RolloutBuffer buf;
      ShapedRewards shaped;
      const auto [ret, eps] = collect_shaped(rep.team, w, buf, shaped, rep.handoffs);
      ret_sum += ret;
      episodes += eps;
      inf_sum += shaped.r_inf.sum();
      div_sum += shaped.r_div.sum();
      cells += static_cast<double>(shaped.r_inf.size());
      if (w.diversity_active) {
        rep.max_div_contribution = std::max(rep.max_div_contribution, w.lambda_div * shaped.r_div.cwiseAbs().maxCoeff());
      }
      compute_gae(buf, cfg_.ppo);
      try {
        rep.last_update = ppo_update(pool_.teams[static_cast<std::size_t>(rep.team)], buf, cfg_.ppo, rngs_[static_cast<std::size_t>(rep.team)]);
      } catch (const Error& e) {
        halt_diverged(rep, u, e.what());
      }
      ++rep.updates;
      rep.env_steps += static_cast<long>(buf.rows());
      pool_.steps_trained[static_cast<std::size_t>(rep.team)] += static_cast<long>(buf.rows());
      if (metrics_) {
        nlohmann::json line{{"team", rep.team},
                            {"chunk", rep.chunk},
                            {"update", u},
                            {"step", pool_.steps_trained[static_cast<std::size_t>(rep.team)]},
                            {"policy_loss", rep.last_update.policy_loss},
                            {"value_loss", rep.last_update.value_loss},
                            {"entropy", rep.last_update.entropy},
                            {"approx_kl", rep.last_update.approx_kl},
                            {"mean_return", eps > 0 ? nlohmann::json(ret / eps) : nlohmann::json(nullptr)},
                            {"r_inf_mean", shaped.r_inf.mean()},
                            {"r_div_mean", shaped.r_div.mean()},
                            {"handoffs", rep.handoffs}};
        *metrics_ << line.dump() << "\n";
      }
    }
    if (cells > 0) {
      rep.mean_r_inf = inf_sum / cells;
      rep.mean_r_div = div_sum / cells;
    }
    if (episodes > 0) rep.mean_episode_return = ret_sum / static_cast<double>(episodes);
    if (!dir_.empty()) save_chunk(rep);
    ++chunk_;
    return rep;
  }

  TeamPool train() {
    while (!done()) run_chunk();
    return pool_;
  }

 private:
  class Stage1Hooks : public RolloutHooks {
   public:
    Stage1Hooks(bool salient, std::size_t rows, std::vector<eval::HandoffDetector>* detectors)
        : enabled_(salient), salient_(rows, Action::North), handoffs_(detectors ? rows : 0, 0), detectors_(detectors) {}
    void episode_start(int env, const WorldState&, Rng&) override {
      if (detectors_) (*detectors_)[static_cast<std::size_t>(env)].reset();
    }
    void after_step(int env, std::size_t row, const WorldState& before, const JointAction&, const StepResult& res) override {
      if (enabled_) salient_[row] = shaping::salient_action(before).action;
      if (detectors_) handoffs_[row] = (*detectors_)[static_cast<std::size_t>(env)].feed(res.counter_events);
    }
    const std::vector<Action>& salient() const { return salient_; }
    const std::vector<int>& handoffs() const { return handoffs_; }

   private:
    bool enabled_;
    std::vector<Action> salient_;
    std::vector<int> handoffs_;
    std::vector<eval::HandoffDetector>* detectors_;
  };

  // Collects one rollout for team m and writes the team reward into buf.
  // Returns (sum of completed episode returns, completed episode count).
  std::pair<double, long> collect_shaped(int m, const shaping::ShapingWeights& w, RolloutBuffer& buf, ShapedRewards& out,
                                         long& handoffs) {
    auto& team = pool_.teams[static_cast<std::size_t>(m)];
    auto& rng = rngs_[static_cast<std::size_t>(m)];
    const int n = cfg_.n;
    std::vector<int> agents(static_cast<std::size_t>(n));
    std::iota(agents.begin(), agents.end(), 0);
    const bool use_inf = w.lambda_inf > 0.0;
    const bool use_handoff = cfg_.handoff_bonus > 0.0;
    Stage1Hooks hooks(use_inf, static_cast<std::size_t>(cfg_.ppo.n_envs) * static_cast<std::size_t>(cfg_.ppo.n_steps),
                      use_handoff ? &detectors_[static_cast<std::size_t>(m)] : nullptr);
    collect_rollout(team, venvs_[static_cast<std::size_t>(m)], *enc_, agents, &hooks, cfg_.ppo.n_steps, rng, buf);

    const auto R = static_cast<Eigen::Index>(buf.rows());
    out.r_inf = Matrix::Zero(R, n);
    out.r_div = Matrix::Zero(R, n);
    if (use_inf) {
      auto& pred = predictors_[static_cast<std::size_t>(m)];
      shaping::InfluenceBatch batch{buf.critic_obs.leftCols(static_cast<Eigen::Index>(n) * enc_->width()), buf.joint_actions,
                                    rollout_event_labels(buf, hooks.salient(), w.K)};
      const auto losses = pred.update(batch, rng);
      if (!losses.q.allFinite()) halt_diverged_predictor(m);
      out.r_inf = pred.rewards(batch.obs, batch.actions);
    }
    if (w.diversity_active && w.lambda_div > 0.0) {
      const auto policies = pool_.policies();
      for (int i = 0; i < n; ++i) {
        const Matrix mean = shaping::population_mean_policy(policies, buf.obs[static_cast<std::size_t>(i)], i);
        for (Eigen::Index r = 0; r < R; ++r) {
          const int a = buf.actions[static_cast<std::size_t>(r) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)];
          out.r_div(r, i) = shaping::diversity_reward(mean(r, a), w.epsilon);
        }
      }
    }
    out.total = Matrix::Zero(R, n);
    for (Eigen::Index r = 0; r < R; ++r) {
      double team_reward = 0.0;
      for (int i = 0; i < n; ++i) {
        const auto b = shaping::combined_reward(buf.env_rewards[static_cast<std::size_t>(r)], out.r_inf(r, i), out.r_div(r, i), w);
        out.total(r, i) = b.total;
        team_reward += b.total;
      }
      buf.rewards[static_cast<std::size_t>(r)] = team_reward / n;
      if (use_handoff) {
        const int h = hooks.handoffs()[static_cast<std::size_t>(r)];
        handoffs += h;
        buf.rewards[static_cast<std::size_t>(r)] += cfg_.handoff_bonus * h;
      }
    }

    auto& running = running_return_[static_cast<std::size_t>(m)];
    double ret = 0.0;
    long eps = 0;
    for (int t = 0; t < buf.n_steps; ++t) {
      for (int e = 0; e < buf.n_envs; ++e) {
        const std::size_t r = buf.row(t, e);
        running[static_cast<std::size_t>(e)] += buf.env_rewards[r];
        if (buf.dones[r]) {
          ret += running[static_cast<std::size_t>(e)];
          ++eps;
          running[static_cast<std::size_t>(e)] = 0.0;
        }
      }
    }
    return {ret, eps};
  }

  void save_chunk(const ChunkReport& rep) {
    const std::string file = "team_" + std::to_string(rep.team) + "_chunk_" + std::to_string(rep.chunk) + ".ckpt";
    const auto& team = pool_.teams[static_cast<std::size_t>(rep.team)];
    team.save(dir_ / file, {{"team", rep.team}, {"chunk", rep.chunk}, {"steps", pool_.steps_trained[static_cast<std::size_t>(rep.team)]}});
    manifest_["chunks"].push_back({{"team", rep.team}, {"chunk", rep.chunk}, {"file", file}, {"hash", hex64(team.hash())}});
    std::ofstream(dir_ / "manifest.json") << manifest_.dump(2) << "\n";
  }

  [[noreturn]] void halt_diverged(const ChunkReport& rep, int update, const std::string& why) {
    std::string where = "team " + std::to_string(rep.team) + ", chunk " + std::to_string(rep.chunk) + ", update " +
                        std::to_string(update);
    if (!dir_.empty()) {
      pool_.teams[static_cast<std::size_t>(rep.team)].save(dir_ / ("diverged_team_" + std::to_string(rep.team) + ".ckpt"),
                                                           {{"reason", why}});
      where += " (checkpoint written to " + dir_.string() + ")";
    }
    throw Error("train.diverged", "training diverged at " + where + ": " + why);
  }

  [[noreturn]] void halt_diverged_predictor(int m) {
    ChunkReport rep;
    rep.team = m;
    rep.chunk = chunk_;
    halt_diverged(rep, -1, "non-finite influence predictor loss");
  }

  PoolConfig cfg_;
  std::ostream* metrics_;
  std::filesystem::path dir_;
  std::shared_ptr<const Layout> layout_;
  std::unique_ptr<ObservationEncoder> enc_;
  TeamPool pool_;
  std::vector<shaping::InfluencePredictors> predictors_;
  std::vector<Rng> rngs_;
  std::vector<VecEnv> venvs_;
  std::vector<std::vector<double>> running_return_;
  std::vector<std::vector<eval::HandoffDetector>> detectors_;
  nlohmann::json manifest_;
  int chunk_ = 0;
};

inline TeamPool train_team_pool(const PoolConfig& cfg, std::ostream* metrics = nullptr,
                                const std::filesystem::path& checkpoint_dir = {}) {
  PoolTrainer trainer(cfg, metrics, checkpoint_dir);
  return trainer.train();
}

// Mean evaluation return per team (same episode seeds for every team), then
// min-max normalized. Writes both into the pool.
inline std::vector<double> score_team_pool(TeamPool& pool, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw Error("pool.score", "zero evaluation episodes");
  if (pool.teams.empty()) throw Error("pool.score", "empty team pool");
  const auto layout = load_layout(pool.layout);
  pool.raw_scores.clear();
  for (const auto& team : pool.teams) pool.raw_scores.push_back(mean_episode_return(team, layout, episodes, seed));
  pool.scores = normalize_scores(pool.raw_scores);
  return pool.scores;
}

}  // namespace ibts::marl
