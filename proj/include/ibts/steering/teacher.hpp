#pragma once

#include <filesystem>
#include <limits>
#include <memory>
#include <ostream>

#include "ibts/controller.hpp"
#include "ibts/marl/pool.hpp"
#include "ibts/predictor/model.hpp"
#include "ibts/steering/reward.hpp"
#include "ibts/util/version.hpp"

namespace ibts::steering {

using marl::ActorCritic;
using marl::PolicyNet;
using predictor::TrajectoryPredictor;

struct TeacherConfig {
  int agent = 0;
  SteeringConfig steering;
  marl::PPOConfig ppo;
  long total_steps = 200000;
  std::uint64_t seed = 1;
  NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(TeacherConfig, agent, steering, ppo, total_steps, seed)
  void validate() const {
    steering.validate();
    ppo.validate();
    if (agent < 0 || total_steps < 1) throw Error("config.teacher", "bad teacher agent index or step budget");
  }
};

// One pool team per episode, uniformly at random.
class PartnerSampler {
 public:
  PartnerSampler(int teams, std::uint64_t seed) : teams_(teams), rng_(seed), counts_(static_cast<std::size_t>(teams), 0) {
    if (teams < 1) throw Error("steering.pool", "cannot sample partners from an empty pool");
  }
  int sample() {
    const int m = rng_.uniform_int(teams_);
    ++counts_[static_cast<std::size_t>(m)];
    return m;
  }
  const std::vector<long>& counts() const { return counts_; }

 private:
  int teams_;
  Rng rng_;
  std::vector<long> counts_;
};

inline void require_scored(const marl::TeamPool& pool) {
  if (pool.teams.empty()) throw Error("steering.pool", "empty team pool");
  if (pool.scores.size() != pool.teams.size()) throw Error("steering.unscored", "team pool has no quality scores");
  for (double s : pool.scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw Error("steering.unscored", "pool scores must lie in [0, 1]");
  }
}

// A teacher is a single-slot actor-critic for one agent position whose
// actor sees (o_i, c).
class TeacherPolicy {
 public:
  TeacherPolicy(int agent, ActorCritic ac, int embedding_dim) : agent_(agent), ac_(std::move(ac)), embedding_dim_(embedding_dim) {}

  int agent() const { return agent_; }
  int embedding_dim() const { return embedding_dim_; }
  ActorCritic& actor_critic() { return ac_; }
  const ActorCritic& actor_critic() const { return ac_; }
  const PolicyNet& actor() const { return ac_.actor(0); }
  std::uint64_t hash() const { return ac_.hash(); }

  void save(const std::filesystem::path& path, nlohmann::json extra = nlohmann::json::object()) const {
    extra["role"] = "teacher";
    extra["agent"] = agent_;
    extra["embedding_dim"] = embedding_dim_;
    ac_.save(path, extra);
  }
  static TeacherPolicy load(const std::filesystem::path& path) {
    const auto ck = nn::load_checkpoint(path);
    const auto& extra = ck.meta.value("extra", nlohmann::json::object());
    if (extra.value("role", "") != "teacher") throw Error("checkpoint.kind", path.string() + " is not a teacher checkpoint");
    return TeacherPolicy(extra.at("agent").get<int>(), ActorCritic::load(path), extra.at("embedding_dim").get<int>());
  }

 private:
  int agent_;
  ActorCritic ac_;
  int embedding_dim_;
};

// Rollout hooks for teacher training: keeps each env's team history, feeds
// the current embedding to the learner, records Q of every completed step,
// and drives partner positions with the episode's sampled pool team.
class SteeringHooks : public marl::RolloutHooks {
 public:
  SteeringHooks(const TrajectoryPredictor& pred, const marl::TeamPool& pool, std::shared_ptr<const Layout> layout,
                int n_envs, PartnerSampler& sampler)
      : pred_(&pred), pool_(&pool), layout_(std::move(layout)), sampler_(&sampler),
        history_(static_cast<std::size_t>(n_envs)), partner_(static_cast<std::size_t>(n_envs), 0),
        c_(nn::Matrix::Zero(n_envs, pred.embedding_dim())) {}

  void begin_rollout(std::size_t rows) {
    q_.assign(rows, std::numeric_limits<double>::quiet_NaN());
    row_partner_.assign(rows, -1);
  }
  const std::vector<double>& quality() const { return q_; }
  const std::vector<int>& row_partner() const { return row_partner_; }

  int extra_dim() const override { return pred_->embedding_dim(); }

  void episode_start(int env, const WorldState&, Rng&) override {
    flush();
    history_[static_cast<std::size_t>(env)].clear();
    c_.row(env).setZero();
    partner_[static_cast<std::size_t>(env)] = sampler_->sample();
  }

  void extra_features(int env, const WorldState&, std::span<double> out) override {
    flush();
    std::copy(c_.row(env).data(), c_.row(env).data() + c_.cols(), out.begin());
  }

  nn::Matrix partner_probs(int agent, const std::vector<int>& envs, const nn::Matrix& obs) override {
    nn::Matrix out(obs.rows(), kNumActions);
    for (int m = 0; m < static_cast<int>(pool_->teams.size()); ++m) {
      std::vector<Eigen::Index> rows;
      for (std::size_t k = 0; k < envs.size(); ++k) {
        if (partner_[static_cast<std::size_t>(envs[k])] == m) rows.push_back(static_cast<Eigen::Index>(k));
      }
      if (rows.empty()) continue;
      nn::Matrix x(static_cast<Eigen::Index>(rows.size()), obs.cols());
      for (std::size_t k = 0; k < rows.size(); ++k) x.row(static_cast<Eigen::Index>(k)) = obs.row(rows[k]);
      const nn::Matrix p = pool_->teams[static_cast<std::size_t>(m)].action_probs(agent, x);
      for (std::size_t k = 0; k < rows.size(); ++k) out.row(rows[k]) = p.row(static_cast<Eigen::Index>(k));
    }
    return out;
  }

  void after_step(int env, std::size_t row, const WorldState& before, const JointAction& joint, const StepResult&) override {
    history_[static_cast<std::size_t>(env)].push(predictor::record_step(before, joint));
    pending_.push_back({env, row});
    if (row < row_partner_.size()) row_partner_[row] = partner_[static_cast<std::size_t>(env)];
  }

  // Runs the predictor on every env whose history grew since the last call.
  void flush() {
    if (pending_.empty()) return;
    std::vector<predictor::TrajectoryWindow> windows;
    windows.reserve(pending_.size());
    for (const auto& p : pending_) windows.push_back(history_[static_cast<std::size_t>(p.env)].window(*layout_));
    std::vector<const predictor::TrajectoryWindow*> ptrs;
    for (const auto& w : windows) ptrs.push_back(&w);
    const nn::Matrix c = pred_->encode_batch(ptrs);
    const nn::Matrix p = pred_->classify(c);
    for (std::size_t k = 0; k < pending_.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      c_.row(pending_[k].env) = c.row(kk);
      if (pending_[k].row < q_.size()) {
        const Eigen::RowVectorXd pk = p.row(kk);
        q_[pending_[k].row] = trajectory_quality(std::span<const double>(pk.data(), static_cast<std::size_t>(pk.size())), pool_->scores);
      }
    }
    pending_.clear();
  }

 private:
  struct Pending {
    int env;
    std::size_t row;
  };
  const TrajectoryPredictor* pred_;
  const marl::TeamPool* pool_;
  std::shared_ptr<const Layout> layout_;
  PartnerSampler* sampler_;
  std::vector<predictor::History> history_;
  std::vector<int> partner_;
  nn::Matrix c_;
  std::vector<Pending> pending_;
  std::vector<double> q_;
  std::vector<int> row_partner_;
};

// r_steer per buffer row: Q must be known at t and t + delta within the same
// episode and the same buffer, otherwise the window is invalid (zero).
inline std::vector<double> rollout_steering_rewards(const marl::RolloutBuffer& buf, const std::vector<double>& q, int delta) {
  std::vector<double> r(buf.rows(), 0.0);
  for (int e = 0; e < buf.n_envs; ++e) {
    for (int t = 0; t < buf.n_steps; ++t) {
      bool valid = t + delta < buf.n_steps;
      for (int u = t; valid && u < t + delta; ++u) valid = !buf.dones[buf.row(u, e)];
      if (!valid) continue;
      r[buf.row(t, e)] = steering_reward(q[buf.row(t, e)], q[buf.row(t + delta, e)], true);
    }
  }
  return r;
}

struct TeacherUpdateReport {
  int update = 0;
  long env_steps = 0;
  double mean_r_steer = 0.0;
  double positive_r_steer_fraction = 0.0;
  double mean_quality = 0.0;
  double mean_episode_return = std::numeric_limits<double>::quiet_NaN();
  marl::UpdateStats stats;
};

// PPO for one agent position on r_env + alpha * r_steer, with the predictor
// and pool frozen (verified by parameter hash on every update).
class TeacherTrainer {
 public:
  TeacherTrainer(const marl::TeamPool& pool, const TrajectoryPredictor& pred, TeacherConfig cfg,
                 std::ostream* metrics = nullptr, std::filesystem::path dir = {})
      : pool_(&pool), pred_(&pred), cfg_(std::move(cfg)), metrics_(metrics), dir_(std::move(dir)),
        layout_(load_layout(pool.layout)), enc_(layout_, pool.n),
        sampler_(static_cast<int>(pool.teams.size()), derive_seed(cfg_.seed, 11)),
        venv_(layout_, pool.n, cfg_.ppo.n_envs, derive_seed(cfg_.seed, 12)), rng_(derive_seed(cfg_.seed, 13)),
        hooks_(pred, pool, layout_, cfg_.ppo.n_envs, sampler_), running_(static_cast<std::size_t>(cfg_.ppo.n_envs), 0.0) {
    cfg_.validate();
    require_scored(pool);
    if (cfg_.agent >= pool.n) throw Error("config.teacher", "teacher agent index out of range");
    if (pred.num_agents() != pool.n || pred.num_teams() != static_cast<int>(pool.teams.size())) {
      throw Error("steering.predictor", "predictor does not match the pool (agents or teams)");
    }
    const marl::CriticEncoder critic(enc_);
    Rng init(derive_seed(cfg_.seed, 10));
    const int d = pred.embedding_dim();
    teacher_ = std::make_unique<TeacherPolicy>(
        cfg_.agent,
        ActorCritic({1, enc_.width() + d, critic.width() + d, cfg_.ppo.hidden}, cfg_.ppo.lr, init,
                    "teacher" + std::to_string(cfg_.agent)),
        d);
    pred_hash_ = pred.hash();
    for (const auto& t : pool.teams) pool_hashes_.push_back(t.hash());
  }

  const TeacherConfig& config() const { return cfg_; }
  const TeacherPolicy& teacher() const { return *teacher_; }
  TeacherPolicy& teacher() { return *teacher_; }
  const PartnerSampler& sampler() const { return sampler_; }
  int total_updates() const {
    const long per = static_cast<long>(cfg_.ppo.n_envs) * cfg_.ppo.n_steps;
    return static_cast<int>((cfg_.total_steps + per - 1) / per);
  }
  int updates_done() const { return updates_; }

  // Collects one rollout with steering rewards in buf (exposed for tests).
  TeacherUpdateReport collect(marl::RolloutBuffer& buf) {
    TeacherUpdateReport rep;
    rep.update = updates_;
    hooks_.begin_rollout(static_cast<std::size_t>(cfg_.ppo.n_envs) * static_cast<std::size_t>(cfg_.ppo.n_steps));
    marl::collect_rollout(teacher_->actor_critic(), venv_, enc_, {cfg_.agent}, &hooks_, cfg_.ppo.n_steps, rng_, buf);
    hooks_.flush();
    const auto r_steer = rollout_steering_rewards(buf, hooks_.quality(), cfg_.steering.delta);
    double ret = 0.0, q_sum = 0.0;
    long eps = 0, positive = 0;
    for (int t = 0; t < buf.n_steps; ++t) {
      for (int e = 0; e < buf.n_envs; ++e) {
        const std::size_t r = buf.row(t, e);
        buf.rewards[r] = total_reward(buf.env_rewards[r], r_steer[r], cfg_.steering);
        rep.mean_r_steer += r_steer[r];
        positive += r_steer[r] > 0.0 ? 1 : 0;
        q_sum += hooks_.quality()[r];
        running_[static_cast<std::size_t>(e)] += buf.env_rewards[r];
        if (buf.dones[r]) {
          ret += running_[static_cast<std::size_t>(e)];
          running_[static_cast<std::size_t>(e)] = 0.0;
          ++eps;
        }
      }
    }
    const double rows = static_cast<double>(buf.rows());
    rep.mean_r_steer /= rows;
    rep.positive_r_steer_fraction = static_cast<double>(positive) / rows;
    rep.mean_quality = q_sum / rows;
    if (eps > 0) rep.mean_episode_return = ret / static_cast<double>(eps);
    rep.env_steps = static_cast<long>(buf.rows());
    last_r_steer_ = r_steer;
    return rep;
  }
  const std::vector<double>& last_steering_rewards() const { return last_r_steer_; }
  const std::vector<double>& last_quality() const { return hooks_.quality(); }

  TeacherUpdateReport update() {
    marl::RolloutBuffer buf;
    TeacherUpdateReport rep = collect(buf);
    marl::compute_gae(buf, cfg_.ppo);
    try {
      rep.stats = marl::ppo_update(teacher_->actor_critic(), buf, cfg_.ppo, rng_);
    } catch (const Error& e) {
      std::string where = "teacher " + std::to_string(cfg_.agent) + ", update " + std::to_string(updates_);
      if (!dir_.empty()) {
        teacher_->save(dir_ / ("diverged_teacher_" + std::to_string(cfg_.agent) + ".ckpt"), {{"reason", e.what()}});
        where += " (checkpoint written to " + dir_.string() + ")";
      }
      throw Error("train.diverged", "training diverged at " + where + ": " + e.what());
    }
    verify_frozen();
    ++updates_;
    if (metrics_) {
      *metrics_ << nlohmann::json{{"teacher", cfg_.agent},
                                  {"update", rep.update},
                                  {"step", static_cast<long>(updates_) * rep.env_steps},
                                  {"policy_loss", rep.stats.policy_loss},
                                  {"value_loss", rep.stats.value_loss},
                                  {"entropy", rep.stats.entropy},
                                  {"approx_kl", rep.stats.approx_kl},
                                  {"r_steer_mean", rep.mean_r_steer},
                                  {"quality_mean", rep.mean_quality},
                                  {"mean_return", std::isnan(rep.mean_episode_return) ? nlohmann::json(nullptr)
                                                                                       : nlohmann::json(rep.mean_episode_return)}}
                       .dump()
                << "\n";
    }
    return rep;
  }

  TeacherPolicy train() {
    while (updates_ < total_updates()) update();
    if (!dir_.empty()) {
      std::filesystem::create_directories(dir_);
      teacher_->save(dir_ / ("teacher_" + std::to_string(cfg_.agent) + ".ckpt"),
                     {{"config", cfg_}, {"predictor_hash", hex64(pred_hash_)}, {"version", version()}});
    }
    return *teacher_;
  }

 private:
  void verify_frozen() const {
    if (pred_->hash() != pred_hash_) throw Error("steering.freeze", "predictor parameters changed during teacher training");
    for (std::size_t m = 0; m < pool_->teams.size(); ++m) {
      if (pool_->teams[m].hash() != pool_hashes_[m]) throw Error("steering.freeze", "partner parameters changed during teacher training");
    }
  }

  const marl::TeamPool* pool_;
  const TrajectoryPredictor* pred_;
  TeacherConfig cfg_;
  std::ostream* metrics_;
  std::filesystem::path dir_;
  std::shared_ptr<const Layout> layout_;
  ObservationEncoder enc_;
  PartnerSampler sampler_;
  marl::VecEnv venv_;
  Rng rng_;
  SteeringHooks hooks_;
  std::vector<double> running_;
  std::unique_ptr<TeacherPolicy> teacher_;
  std::uint64_t pred_hash_ = 0;
  std::vector<std::uint64_t> pool_hashes_;
  std::vector<double> last_r_steer_;
  int updates_ = 0;
};

inline TeacherPolicy train_teacher(const marl::TeamPool& pool, const TrajectoryPredictor& pred, const TeacherConfig& cfg,
                                   std::ostream* metrics = nullptr, const std::filesystem::path& dir = {}) {
  TeacherTrainer trainer(pool, pred, cfg, metrics, dir);
  return trainer.train();
}

// Plays one agent position with a (o_i, c) actor; the embedding comes from
// the predictor over the whole team's history so far.
class SteeredController : public Controller {
 public:
  SteeredController(const PolicyNet& actor, const TrajectoryPredictor& pred, std::shared_ptr<const Layout> layout, int n,
                    bool greedy = false)
      : actor_(&actor), pred_(&pred), layout_(layout), enc_(std::move(layout), n), greedy_(greedy) {
    if (actor.input_dim() != enc_.width() + pred.embedding_dim()) {
      throw Error("steering.dims", "actor input width does not match observation + embedding");
    }
  }

  void reset(const WorldState&) override { history_.clear(); }

  void act(const WorldState& s, std::span<const int> agents, std::span<Action> out, Rng& rng) override {
    const predictor::Prediction pc = history_.empty() ? pred_->cold_start() : pred_->predict(history_.window(*layout_));
    nn::Matrix x(1, actor_->input_dim());
    for (std::size_t k = 0; k < agents.size(); ++k) {
      enc_.encode(s, agents[k], std::span<double>(x.data(), static_cast<std::size_t>(enc_.width())));
      x.rightCols(pc.c.cols()) = pc.c;
      const nn::Matrix p = actor_->probs(x);
      int a = 0;
      if (greedy_) {
        p.row(0).maxCoeff(&a);
      } else {
        a = sample_from(std::span<const double>(p.data(), kNumActions), rng);
      }
      out[k] = kAllActions[static_cast<std::size_t>(a)];
    }
  }

  void observe(const WorldState& before, std::span<const Action> joint) override {
    history_.push(predictor::record_step(before, joint));
  }

 private:
  const PolicyNet* actor_;
  const TrajectoryPredictor* pred_;
  std::shared_ptr<const Layout> layout_;
  ObservationEncoder enc_;
  predictor::History history_;
  bool greedy_;
};

}  // namespace ibts::steering
