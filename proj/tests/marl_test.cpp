#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "bandit.hpp"
#include "gae_oracle.hpp"
#include "ibts/marl/pool.hpp"

using namespace ibts;
using namespace ibts::marl;

namespace {

PoolConfig tiny_pool_config() {
  PoolConfig cfg;
  cfg.layout = "Cramped-2";
  cfg.n = 2;
  cfg.M = 3;
  cfg.cycles = 2;
  cfg.ppo.n_envs = 2;
  cfg.ppo.n_steps = 40;
  cfg.ppo.batch_size = 40;
  cfg.ppo.epochs = 2;
  cfg.ppo.hidden = {16, 16};
  cfg.chunk_steps = 80;
  cfg.influence.hidden = {16, 16};
  cfg.influence.batch_size = 64;
  cfg.eval_episodes = 2;
  return cfg;
}

}  // namespace

TEST(PPOConfig, DefaultsAndValidation) {
  PPOConfig c;
  EXPECT_EQ(c.gamma, 0.99);
  EXPECT_EQ(c.gae_lambda, 0.95);
  EXPECT_EQ(c.clip, 0.15);
  EXPECT_EQ(c.entropy_coef, 0.05);
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_EQ(c.epochs, 6);
  EXPECT_EQ(c.batch_size, 1024);
  EXPECT_EQ(c.n_envs, 64);
  EXPECT_EQ(c.n_steps, 1024);
  EXPECT_EQ(c.max_grad_norm, 0.5);
  EXPECT_EQ(c.target_kl, 0.025);
  EXPECT_NO_THROW(c.validate());
  c.clip = 1.0;
  EXPECT_THROW(c.validate(), Error);
  const PPOConfig round = nlohmann::json(PPOConfig{}).get<PPOConfig>();
  EXPECT_EQ(round.n_steps, 1024);
}

TEST(Gae, SuffixSumsWithUnitDiscount) {
  RolloutBuffer buf;
  buf.allocate(1, 3, 1, 1, 1);
  buf.rewards = {1, 1, 1};
  buf.dones = {0, 0, 1};
  PPOConfig cfg;
  cfg.gamma = 1.0;
  cfg.gae_lambda = 1.0;
  compute_gae(buf, cfg);
  EXPECT_EQ(buf.advantages, (std::vector<double>{3, 2, 1}));
  EXPECT_EQ(buf.returns, (std::vector<double>{3, 2, 1}));
}

TEST(Gae, LambdaZeroIsTdError) {
  Rng rng(3);
  auto buf = test::random_rollout(rng, 3, 15, 0.1);
  PPOConfig cfg;
  cfg.gae_lambda = 0.0;
  compute_gae(buf, cfg);
  for (int e = 0; e < 3; ++e) {
    for (int t = 0; t < 15; ++t) {
      const std::size_t r = buf.row(t, e);
      const double next = t == 14 ? buf.bootstrap[static_cast<std::size_t>(e)] : buf.values[buf.row(t + 1, e)];
      EXPECT_EQ(buf.advantages[r], buf.rewards[r] + (buf.dones[r] ? 0.0 : cfg.gamma * next) - buf.values[r]);
    }
  }
}

TEST(Gae, MatchesDefinitionalOracle) {
  Rng rng(4);
  PPOConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    auto buf = test::random_rollout(rng, 2, 20, 0.08);
    compute_gae(buf, cfg);
    const auto oracle = test::gae_oracle(buf, cfg.gamma, cfg.gae_lambda);
    for (std::size_t r = 0; r < buf.rows(); ++r) {
      EXPECT_NEAR(buf.advantages[r], oracle[r], 1e-10);
      EXPECT_EQ(buf.returns[r], buf.advantages[r] + buf.values[r]);
    }
  }
  auto buf = test::random_rollout(rng, 2, 5, 0.0);
  buf.bootstrap.pop_back();
  EXPECT_THROW(compute_gae(buf, cfg), Error);
}

TEST(Ppo, SurrogateGradientZeroInClippedRegion) {
  EXPECT_EQ(surrogate_grad(1.2, 1.0, 0.15), 0.0);
  EXPECT_EQ(surrogate_grad(0.8, -1.0, 0.15), 0.0);
  EXPECT_EQ(surrogate_grad(1.1, 1.0, 0.15), -1.1);
  EXPECT_EQ(surrogate_grad(1.2, -1.0, 0.15), 1.2);
}

TEST(Ppo, ZeroAdvantagesMoveActorOnlyThroughEntropy) {
  for (double ent : {0.0, 0.05}) {
    Rng rng(5);
    PPOConfig cfg;
    cfg.entropy_coef = ent;
    cfg.hidden = {8};
    ActorCritic ac({1, 3, 3, cfg.hidden}, cfg.lr, rng);
    RolloutBuffer buf;
    buf.allocate(64, 1, 1, 3, 3);
    buf.obs[0] = nn::gaussian(64, 3, 1.0, rng);
    buf.critic_obs = buf.obs[0];
    const nn::Matrix logp = nn::log_softmax_rows(ac.actor(0).logits(buf.obs[0]));
    for (int r = 0; r < 64; ++r) {
      buf.actions[static_cast<std::size_t>(r)] = r % kNumActions;
      buf.log_probs(r, 0) = logp(r, r % kNumActions);
    }
    buf.advantages.assign(64, 0.0);
    buf.returns.assign(64, 1.0);
    const auto before = nn::parameter_hash(ac.actor_parameters());
    ppo_update(ac, buf, cfg, rng);
    if (ent == 0.0) {
      EXPECT_EQ(nn::parameter_hash(ac.actor_parameters()), before);
    } else {
      EXPECT_NE(nn::parameter_hash(ac.actor_parameters()), before);
    }
  }
}

TEST(Ppo, KlSafeguardStopsFurtherSteps) {
  Rng rng(6);
  PPOConfig cfg;
  cfg.hidden = {8};
  cfg.batch_size = 16;
  cfg.target_kl = 1e-12;
  ActorCritic ac({1, 2, 2, cfg.hidden}, 0.5, rng);
  RolloutBuffer buf;
  buf.allocate(64, 1, 1, 2, 2);
  buf.obs[0] = nn::gaussian(64, 2, 1.0, rng);
  buf.critic_obs = buf.obs[0];
  const nn::Matrix logp = nn::log_softmax_rows(ac.actor(0).logits(buf.obs[0]));
  for (int r = 0; r < 64; ++r) {
    buf.actions[static_cast<std::size_t>(r)] = 0;
    buf.log_probs(r, 0) = logp(r, 0);
  }
  buf.advantages.assign(64, 0.0);
  for (int r = 0; r < 64; ++r) buf.advantages[static_cast<std::size_t>(r)] = r % 2 ? 1.0 : -1.0;
  buf.returns.assign(64, 0.0);
  const auto stats = ppo_update(ac, buf, cfg, rng);
  EXPECT_TRUE(stats.early_stopped);
  EXPECT_GT(stats.approx_kl, cfg.target_kl);
  // The first minibatch matches the behaviour policy exactly (KL 0), so one
  // step is taken before the stop triggers.
  EXPECT_EQ(stats.minibatches, 1);
  EXPECT_EQ(stats.epochs_completed, 0);
}

TEST(Ppo, BanditConvergesToRewardedAction) {
  const auto history = test::run_bandit(1, 200, PPOConfig{}, 0.9);
  int first = -1;
  for (std::size_t u = 0; u < history.size() && first < 0; ++u) {
    if (history[u] > 0.9) first = static_cast<int>(u);
  }
  EXPECT_GE(first, 0);
}

TEST(Rollout, SizesShapingOffAndDeterminism) {
  const auto layout = load_layout("Cramped-2");
  const ObservationEncoder enc(layout, 2);
  const CriticEncoder critic(enc);
  Rng init(1);
  ActorCritic ac({2, enc.width(), critic.width(), {16}}, 1e-4, init);
  auto run = [&](std::uint64_t seed) {
    VecEnv venv(layout, 2, 4, seed);
    Rng rng(seed);
    RolloutBuffer buf;
    collect_rollout(ac, venv, enc, {0, 1}, nullptr, 450, rng, buf);
    return buf;
  };
  const auto a = run(9);
  const auto b = run(9);
  EXPECT_EQ(a.rows(), 4u * 450u);
  EXPECT_EQ(a.rewards, a.env_rewards);
  EXPECT_EQ(a.actions, b.actions);
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.bootstrap, b.bootstrap);
  EXPECT_TRUE(a.critic_obs == b.critic_obs);
  // Each env finishes exactly one 400-step episode within 450 steps.
  for (int e = 0; e < 4; ++e) {
    int dones = 0;
    for (int t = 0; t < 450; ++t) dones += a.dones[a.row(t, e)];
    EXPECT_EQ(dones, 1);
    EXPECT_EQ(a.dones[a.row(kHorizon - 1, e)], 1);
  }
  EXPECT_THROW(collect_rollout(ac, *std::make_unique<VecEnv>(layout, 2, 1, 1), enc, {0}, nullptr, 1, init,
                               *std::make_unique<RolloutBuffer>()),
               Error);
}

TEST(Rollout, ValidProbabilities) {
  const auto layout = load_layout("FC-3");
  const ObservationEncoder enc(layout, 3);
  const CriticEncoder critic(enc);
  Rng init(2);
  ActorCritic ac({3, enc.width(), critic.width(), {32, 32}}, 1e-4, init);
  VecEnv venv(layout, 3, 2, 5);
  Rng rng(3);
  RolloutBuffer buf;
  collect_rollout(ac, venv, enc, {0, 1, 2}, nullptr, 50, rng, buf);
  for (int k = 0; k < 3; ++k) {
    const nn::Matrix p = ac.action_probs(k, buf.obs[static_cast<std::size_t>(k)]);
    ASSERT_EQ(p.cols(), kNumActions);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
      EXPECT_GE(p.row(r).minCoeff(), 0.0);
    }
  }
}

TEST(RolloutLabels, WindowsStopAtEpisodeEnd) {
  RolloutBuffer buf;
  buf.allocate(1, 6, 2, 1, 1);
  buf.n_agents = 2;
  buf.joint_actions.assign(12, index_of(Action::Stay));
  buf.joint_actions[3 * 2 + 1] = index_of(Action::Interact);  // agent 1 at t=3
  buf.dones[2] = 1;                                           // episode ends after t=2
  const std::vector<Action> sal(6, Action::Interact);
  const auto y = rollout_event_labels(buf, sal, 4);
  EXPECT_EQ(y[0 * 2 + 1], 0);  // t=0 window is t=1..2 (episode ends)
  EXPECT_EQ(y[2 * 2 + 1], 0);
  EXPECT_EQ(y[5 * 2 + 1], 0);
  buf.dones[2] = 0;
  EXPECT_EQ(rollout_event_labels(buf, sal, 4)[0 * 2 + 1], 1);
}

TEST(Scores, MinMaxNormalization) {
  const auto s = normalize_scores({100, 150, 200, 120, 180});
  const std::vector<double> expect{0, 0.5, 1.0, 0.2, 0.8};
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], expect[i], 1e-12);
  EXPECT_EQ(normalize_scores({7, 7, 7}), (std::vector<double>{1, 1, 1}));
  EXPECT_THROW(normalize_scores({}), Error);
}

TEST(PoolTrainer, RoundRobinFreezeAndDiversitySchedule) {
  auto cfg = tiny_pool_config();
  std::ostringstream metrics;
  PoolTrainer trainer(cfg, &metrics);
  EXPECT_EQ(trainer.total_chunks(), 6);
  EXPECT_EQ(trainer.updates_per_chunk(), 1);
  std::vector<int> order;
  while (!trainer.done()) {
    std::vector<std::uint64_t> before;
    for (const auto& t : trainer.pool().teams) before.push_back(t.hash());
    const auto rep = trainer.run_chunk();
    order.push_back(rep.team);
    for (int m = 0; m < cfg.M; ++m) {
      if (m == rep.team) {
        EXPECT_NE(trainer.pool().teams[static_cast<std::size_t>(m)].hash(), before[static_cast<std::size_t>(m)]);
      } else {
        EXPECT_EQ(trainer.pool().teams[static_cast<std::size_t>(m)].hash(), before[static_cast<std::size_t>(m)]);
      }
    }
    EXPECT_EQ(rep.diversity_active, rep.cycle >= 1);
    if (rep.cycle == 0) EXPECT_EQ(rep.max_div_contribution, 0.0);
    if (rep.cycle == 1) EXPECT_GT(rep.max_div_contribution, 0.0);
    EXPECT_GE(rep.mean_r_inf, 0.0);
    EXPECT_LE(rep.mean_r_inf, 1.0);
  }
  EXPECT_EQ(order, (std::vector<int>{0, 1, 2, 0, 1, 2}));
  EXPECT_THROW(trainer.run_chunk(), Error);
  std::istringstream lines(metrics.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("policy_loss"));
    EXPECT_TRUE(j.contains("r_inf_mean"));
    ++count;
  }
  EXPECT_EQ(count, 6);
}

TEST(PoolTrainer, SeededReproducibility) {
  const auto cfg = [] {
    auto c = tiny_pool_config();
    c.cycles = 1;
    return c;
  }();
  const auto a = train_team_pool(cfg);
  const auto b = train_team_pool(cfg);
  for (int m = 0; m < cfg.M; ++m) EXPECT_EQ(a.teams[static_cast<std::size_t>(m)].hash(), b.teams[static_cast<std::size_t>(m)].hash());
  auto bad = cfg;
  bad.M = 1;
  EXPECT_THROW(PoolTrainer{bad}, Error);
}

TEST(PoolTrainer, CheckpointsAndPoolRoundTrip) {
  auto cfg = tiny_pool_config();
  cfg.cycles = 1;
  const auto dir = std::filesystem::temp_directory_path() / "ibts_pool_test";
  std::filesystem::remove_all(dir);
  auto pool = train_team_pool(cfg, nullptr, dir / "chunks");
  std::ifstream mf(dir / "chunks" / "manifest.json");
  const auto manifest = nlohmann::json::parse(mf);
  EXPECT_EQ(manifest["chunks"].size(), 3u);
  EXPECT_TRUE(manifest.contains("config_hash"));
  const auto s1 = score_team_pool(pool, 2, 11);
  const auto s2 = score_team_pool(pool, 2, 11);
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(*std::max_element(s1.begin(), s1.end()), 1.0);
  pool.save(dir / "pool");
  const auto loaded = TeamPool::load(dir / "pool");
  ASSERT_EQ(loaded.size(), pool.size());
  for (std::size_t m = 0; m < pool.size(); ++m) EXPECT_EQ(loaded.teams[m].hash(), pool.teams[m].hash());
  EXPECT_EQ(loaded.scores, pool.scores);
  EXPECT_THROW(score_team_pool(pool, 0, 1), Error);
  std::filesystem::remove_all(dir);
}
