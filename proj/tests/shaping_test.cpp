#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "ibts/env/layout.hpp"
#include "ibts/shaping/features.hpp"
#include "ibts/shaping/influence.hpp"
#include "ibts/shaping/rewards.hpp"
#include "test_util.hpp"

using namespace ibts;
using namespace ibts::shaping;

namespace {

std::shared_ptr<const Layout> make_layout(const std::string& text) {
  return std::make_shared<const Layout>(parse_layout(text, "test"));
}

// Squared feature change computed from state differences rather than from
// the feature vector.
double oracle_change(const WorldState& a, const WorldState& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    const double dx = a.agents[i].position.x - b.agents[i].position.x;
    const double dy = a.agents[i].position.y - b.agents[i].position.y;
    sq += dx * dx + dy * dy;
    if (a.agents[i].held != b.agents[i].held) sq += 2.0;
  }
  for (const Cell& c : a.layout->counters()) {
    const Item x = a.item_at(c);
    const Item y = b.item_at(c);
    if (x != y) sq += (x == Item::Nothing || y == Item::Nothing) ? 1.0 : 2.0;
  }
  for (std::size_t p = 0; p < a.pots.size(); ++p) {
    const double d = a.pots[p].onions - b.pots[p].onions;
    sq += d * d;
  }
  return std::sqrt(sq);
}

std::array<double, kNumActions> oracle_salient(const WorldState& s) {
  std::array<double, kNumActions> change{};
  for (std::size_t a = 0; a < kAllActions.size(); ++a) {
    for (int i = 0; i < s.num_agents(); ++i) {
      JointAction joint(static_cast<std::size_t>(s.num_agents()), Action::Stay);
      joint[static_cast<std::size_t>(i)] = kAllActions[a];
      change[a] += oracle_change(s, step(s, joint).state);
    }
    change[a] /= s.num_agents();
  }
  return change;
}

class FixedPolicy : public TeamPolicy {
 public:
  explicit FixedPolicy(std::array<double, kNumActions> p) : p_(p) {}
  int num_agents() const override { return 2; }
  nn::Matrix action_probs(int, const nn::Matrix& obs) const override {
    nn::Matrix m(obs.rows(), kNumActions);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (int a = 0; a < kNumActions; ++a) m(r, a) = p_[static_cast<std::size_t>(a)];
    }
    return m;
  }

 private:
  std::array<double, kNumActions> p_;
};

class RandomMlpPolicy : public TeamPolicy {
 public:
  RandomMlpPolicy(int obs_dim, Rng& rng) : net_(obs_dim, {16}, kNumActions, nn::Activation::Tanh, rng, "pi", 3.0) {}
  int num_agents() const override { return 2; }
  nn::Matrix action_probs(int, const nn::Matrix& obs) const override { return nn::softmax_rows(net_.forward(obs)); }

 private:
  nn::Mlp net_;
};

}  // namespace

TEST(CollabFeatures, StayHasZeroDeltaAndPickupChanges) {
  const auto layout = load_layout("Cramped-2");
  auto s = reset(layout, 2, 1);
  const auto before = collab_features(s);
  const auto stayed = step(s, {Action::Stay, Action::Stay}).state;
  EXPECT_EQ(collab_features(stayed), before);

  // Walk agent 0 to the onion source and pick up.
  auto ep = test::random_episode(layout, 2, 5, 200, 0.4);
  bool saw_pickup = false;
  for (std::size_t t = 0; t + 1 < ep.states.size(); ++t) {
    const auto& a = ep.states[t];
    const auto& b = ep.states[t + 1];
    const auto fa = collab_features(a);
    const auto fb = collab_features(b);
    ASSERT_EQ(fa.size(), fb.size());
    EXPECT_EQ(static_cast<int>(fa.size()), collab_feature_width(*layout, 2));
    bool changed = false;
    for (std::size_t i = 0; i < a.agents.size(); ++i) {
      changed = changed || a.agents[i].position != b.agents[i].position || a.agents[i].held != b.agents[i].held;
      if (a.agents[i].held == Item::Nothing && b.agents[i].held == Item::Onion) saw_pickup = true;
    }
    for (const Cell& c : layout->counters()) changed = changed || a.item_at(c) != b.item_at(c);
    for (std::size_t p = 0; p < a.pots.size(); ++p) changed = changed || a.pots[p].onions != b.pots[p].onions;
    EXPECT_EQ(changed, fa != fb) << "t=" << t;
  }
  EXPECT_TRUE(saw_pickup);
}

TEST(SalientAction, DishAtReadyPotPicksInteract) {
  const auto layout = make_layout("XXPXXXX\nO_1XX2X\nD__XXXX\nXXSXXXX\n");
  auto s = reset(layout, 2, 0);
  ASSERT_EQ(s.agents[0].position, (Cell{2, 1}));
  s.agents[0].facing = Direction::North;
  s.agents[0].held = Item::Dish;
  s.pots[0] = PotState{3, 0, true};
  const auto rec = salient_action(s);
  EXPECT_EQ(rec.action, Action::Interact);
  const auto oracle = oracle_salient(s);
  for (std::size_t a = 0; a < kAllActions.size(); ++a) EXPECT_NEAR(rec.change[a], oracle[a], 1e-12);
}

TEST(SalientAction, FullyBoxedInTiesToNorth) {
  const auto layout = make_layout("OXDXPXS\nX1XXX2X\nXXXXXXX\n");
  const auto s = reset(layout, 2, 0);
  const auto rec = salient_action(s);
  for (double c : rec.change) EXPECT_EQ(c, 0.0);
  EXPECT_EQ(rec.action, Action::North);
}

TEST(SalientAction, MatchesOracleOnRandomStates) {
  for (const char* name : {"Cramped-2", "FC-3", "PL-4"}) {
    const auto layout = load_layout(name);
    const int n = layout->max_agents();
    const auto ep = test::random_episode(layout, n, 42, 120, 0.4);
    for (std::size_t t = 0; t < ep.states.size() - 1; t += 7) {
      const auto rec = salient_action(ep.states[t]);
      const auto oracle = oracle_salient(ep.states[t]);
      std::size_t best = 0;
      for (std::size_t a = 0; a < kAllActions.size(); ++a) {
        EXPECT_NEAR(rec.change[a], oracle[a], 1e-9);
        if (oracle[a] > oracle[best] + 1e-12) best = a;
      }
      EXPECT_EQ(rec.action, kAllActions[best]);
      EXPECT_EQ(salient_action(ep.states[t]).action, rec.action);
      // Scaling all changes by a positive constant keeps the argmax.
      std::size_t scaled = 0;
      for (std::size_t a = 1; a < kAllActions.size(); ++a) {
        if (3.7 * rec.change[a] > 3.7 * rec.change[scaled]) scaled = a;
      }
      EXPECT_EQ(kAllActions[scaled], rec.action);
    }
  }
}

TEST(EventLabels, WindowExamples) {
  auto traj = [](std::vector<Action> agent1) {
    std::vector<JointAction> out;
    for (Action a : agent1) out.push_back({Action::Stay, a});
    return out;
  };
  const std::vector<Action> sal(8, Action::Interact);
  using A = Action;
  EXPECT_EQ(event_labels(traj({A::Stay, A::Stay, A::Interact, A::Stay, A::Stay, A::Stay, A::Stay, A::Stay}), sal, 4)[0][1], 1);
  EXPECT_EQ(event_labels(traj({A::Stay, A::Stay, A::Stay, A::Stay, A::Stay, A::Interact, A::Stay, A::Stay}), sal, 4)[0][1], 0);
  const auto twice = event_labels(traj({A::Stay, A::Interact, A::Stay, A::Interact, A::Stay, A::Stay, A::Stay, A::Stay}), sal, 4);
  EXPECT_EQ(twice[0][1], 1);
  EXPECT_EQ(twice[0][0], 0);
  EXPECT_EQ(twice[7][1], 0);  // no future steps
  EXPECT_THROW(event_labels({}, {}, 4), Error);
  EXPECT_THROW(event_labels(traj({A::Stay}), {A::Stay}, 0), Error);
}

TEST(EventLabels, DependOnlyOnWindow) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int T = 30;
    const int K = 1 + static_cast<int>(rng.uniform_int(7));
    std::vector<JointAction> actions;
    std::vector<Action> sal;
    for (int t = 0; t < T; ++t) {
      actions.push_back(test::random_joint_action(rng, 3));
      sal.push_back(kAllActions[rng.uniform_int(6)]);
    }
    const auto y = event_labels(actions, sal, K);
    const int t0 = static_cast<int>(rng.uniform_int(T));
    auto mutated = actions;
    for (int u = t0 + K + 1; u < T; ++u) mutated[static_cast<std::size_t>(u)] = test::random_joint_action(rng, 3);
    EXPECT_EQ(event_labels(mutated, sal, K)[static_cast<std::size_t>(t0)], y[static_cast<std::size_t>(t0)]);
  }
}

TEST(InfluenceReward, Examples) {
  EXPECT_NEAR(influence_reward({{0, 0.7}, {0.7, 0}}, {0.4, 0.4})[0], 0.3, 1e-12);
  EXPECT_EQ(influence_reward({{0, 0.2}, {0.2, 0}}, {0.6, 0.6})[0], 0.0);
  // n=3: agent 0's contributions 0.3 (to 1) and 0.1 (to 2).
  EXPECT_NEAR(influence_reward({{0, 0.8, 0.6}, {0, 0, 0}, {0, 0, 0}}, {0.1, 0.5, 0.5})[0], 0.2, 1e-12);
  EXPECT_THROW(influence_reward({{0}}, {0.5}), Error);
}

TEST(InfluenceReward, RangeProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 20000; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(3));
    std::vector<std::vector<double>> q(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
    std::vector<double> om(static_cast<std::size_t>(n));
    for (auto& v : om) v = rng.uniform();
    const bool dominated = trial % 2 == 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        q[i][j] = dominated ? om[static_cast<std::size_t>(j)] * rng.uniform() : rng.uniform();
      }
    }
    for (double r : influence_reward(q, om)) {
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
      if (dominated) EXPECT_EQ(r, 0.0);
    }
  }
}

TEST(InfluencePredictors, StructureAndDefaults) {
  Rng rng(1);
  for (int n = 2; n <= 4; ++n) {
    InfluencePredictors p(n, 10, {}, rng);
    EXPECT_EQ(p.num_q_networks(), static_cast<std::size_t>(n * (n - 1)));
    EXPECT_EQ(p.num_omega_networks(), static_cast<std::size_t>(n));
  }
  InfluencePredictors p(2, 10, {}, rng);
  EXPECT_EQ(p.config().lr, 1e-4);
  EXPECT_EQ(p.config().batch_size, 2048);
  EXPECT_EQ(p.config().epochs, 1);
  EXPECT_EQ(p.config().max_grad_norm, 0.5);
  EXPECT_THROW(InfluencePredictors(1, 10, {}, rng), Error);
}

TEST(InfluencePredictors, OutputsAreProbabilitiesAndRewardsBounded) {
  Rng rng(2);
  InfluencePredictors p(3, 12, {}, rng);
  const nn::Matrix obs = nn::gaussian(50, 12, 3.0, rng);
  std::vector<int> acts(150);
  for (auto& a : acts) a = static_cast<int>(rng.uniform_int(6));
  const nn::Matrix q = p.q_prob(0, 2, obs, acts);
  EXPECT_GT(q.minCoeff(), 0.0);
  EXPECT_LT(q.maxCoeff(), 1.0);
  const nn::Matrix r = p.rewards(obs, acts);
  EXPECT_GE(r.minCoeff(), 0.0);
  EXPECT_LE(r.maxCoeff(), 1.0);
  // Row-by-row agreement with the pure reward function.
  for (Eigen::Index row = 0; row < 5; ++row) {
    const nn::Matrix o = obs.row(row);
    const std::vector<int> a(acts.begin() + row * 3, acts.begin() + row * 3 + 3);
    std::vector<std::vector<double>> qm(3, std::vector<double>(3, 0.0));
    std::vector<double> om(3);
    for (int j = 0; j < 3; ++j) {
      om[static_cast<std::size_t>(j)] = p.omega_prob(j, o)(0, 0);
      for (int i = 0; i < 3; ++i) {
        if (i != j) qm[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = p.q_prob(i, j, o, a)(0, 0);
      }
    }
    const auto expect = influence_reward(qm, om);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(r(row, i), expect[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(InfluencePredictors, AllOnesLabelsLossDecreases) {
  Rng rng(4);
  InfluencePredictors p(2, 8, {}, rng);
  InfluenceBatch batch{nn::gaussian(256, 8, 1.0, rng), std::vector<int>(512, 4), std::vector<std::uint8_t>(512, 1)};
  double prev_q = 1e9, prev_om = 1e9;
  for (int k = 0; k < 30; ++k) {
    const auto losses = p.update(batch, rng);
    EXPECT_LT(losses.q(0, 1), prev_q);
    EXPECT_LT(losses.omega[1], prev_om);
    prev_q = losses.q(0, 1);
    prev_om = losses.omega[1];
  }
  EXPECT_THROW(p.update(InfluenceBatch{nn::Matrix(0, 8), {}, {}}, rng), Error);
}

TEST(InfluencePredictors, BceGradientMatchesFiniteDifferences) {
  Rng rng(5);
  // Five parameters: 2x1 weight, 1 bias, 1x1 weight, 1 bias.
  nn::Mlp toy(2, {1}, 1, nn::Activation::Relu, rng, "toy", 1.0);
  ASSERT_EQ(nn::parameter_count(toy.parameters()), 5u);
  InfluencePredictors p(3, 6, InfluenceConfig{.hidden = {5, 4}}, rng);
  for (nn::Mlp* net : {&toy, &p.q(1, 2), &p.omega(0)}) {
    const nn::Matrix x = nn::gaussian(12, net->in_dim(), 1.0, rng);
    std::vector<double> y(12);
    for (auto& v : y) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    auto params = net->parameters();
    test::jitter(params, rng);
    nn::zero_grad(params);
    nn::Mlp::Cache cache;
    net->backward(cache, nn::bce_with_logits(net->forward(x, cache), y).grad);
    const auto r = test::grad_check(params, [&] { return nn::bce_with_logits(net->forward(x), y).loss; });
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(InfluencePredictors, CheckpointRoundTrip) {
  Rng rng(6);
  InfluencePredictors a(2, 5, {}, rng), b(2, 5, {}, rng);
  const auto path = std::filesystem::temp_directory_path() / "ibts_influence.ckpt";
  a.save(path);
  b.load(path);
  EXPECT_EQ(nn::parameter_hash(a.parameters()), nn::parameter_hash(b.parameters()));
  std::filesystem::remove(path);
}

TEST(DiversityReward, Examples) {
  EXPECT_EQ(diversity_reward(1.0, 1e-8), 0.0);
  EXPECT_NEAR(diversity_reward(std::exp(-1.0), 1e-8), 1.0, 1e-12);
  EXPECT_NEAR(diversity_reward(0.0, 1e-8), 18.420680743952367, 1e-9);
  double prev = diversity_reward(0.0, 1e-8);
  for (double p = 0.0; p <= 1.0; p += 0.001) {
    const double r = diversity_reward(p, 1e-8);
    EXPECT_LE(r, prev);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, -std::log(1e-8));
    prev = r;
  }
}

TEST(PopulationMean, Examples) {
  const nn::Matrix obs = nn::Matrix::Zero(3, 4);
  FixedPolicy north({1, 0, 0, 0, 0, 0}), south({0, 1, 0, 0, 0, 0});
  std::vector<const TeamPolicy*> same{&north, &north};
  EXPECT_EQ(population_mean_policy(same, obs, 0), north.action_probs(0, obs));
  std::vector<const TeamPolicy*> mixed{&north, &south};
  const auto m = population_mean_policy(mixed, obs, 1);
  EXPECT_EQ(m(0, 0), 0.5);
  EXPECT_EQ(m(0, 1), 0.5);
  Rng rng(9);
  std::vector<RandomMlpPolicy> pool;
  for (int k = 0; k < 5; ++k) pool.emplace_back(4, rng);
  std::vector<const TeamPolicy*> ptrs;
  for (auto& p : pool) ptrs.push_back(&p);
  const auto r = population_mean_policy(ptrs, nn::gaussian(10, 4, 1.0, rng), 0);
  for (Eigen::Index row = 0; row < r.rows(); ++row) EXPECT_NEAR(r.row(row).sum(), 1.0, 1e-6);
  EXPECT_THROW(population_mean_policy(std::vector<const TeamPolicy*>{}, obs, 0), Error);
}

TEST(CombinedReward, Examples) {
  ShapingWeights w;
  w.diversity_active = true;
  EXPECT_NEAR(combined_reward(3.0, 0.002, 1.0, w).total, 3.02, 1e-12);
  EXPECT_EQ(combined_reward(3.0, 0.0, 0.0, w).total, 3.0);
  w.diversity_active = false;
  EXPECT_EQ(combined_reward(1.0, 0.1, 0.0, w).total, combined_reward(1.0, 0.1, 17.0, w).total);
  Rng rng(10);
  w.diversity_active = true;
  for (int k = 0; k < 1000; ++k) {
    const double e = rng.uniform(-5, 25), i = rng.uniform(), d = rng.uniform(0, 18);
    EXPECT_EQ(combined_reward(e, i, d, w).total, e + w.lambda_inf * i + w.lambda_div * d);
  }
}

TEST(ShapingWeights, Validation) {
  ShapingWeights w;
  EXPECT_NO_THROW(w.validate());
  EXPECT_EQ(w.K, 4);
  EXPECT_EQ(w.lambda_inf, 5.0);
  EXPECT_EQ(w.lambda_div, 0.01);
  w.K = 0;
  EXPECT_THROW(w.validate(), Error);
  w = {};
  w.epsilon = 1.0;
  EXPECT_THROW(w.validate(), Error);
}
