#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "rulmdp/agents.hpp"
#include "rulmdp/errors.hpp"

using namespace rulmdp;

namespace {

MdpSpec short_toy() {
  MdpSpec m = toy_mdp();
  m.episode_len = 20;
  return m;
}

AgentConfig small_agent(AgentKind kind, std::size_t steps) {
  AgentConfig c;
  c.kind = kind;
  c.budget_steps = steps;
  c.seed = 5;
  c.dqn.batch = 16;
  c.dqn.hidden = {8};
  c.ppo.hidden = {8};
  c.ppo.rollout = 100;
  c.ppo.batch = 20;
  c.ppo.epochs = 2;
  c.sac.batch = 16;
  c.sac.hidden = {8};
  return c;
}

}  // namespace

TEST_CASE("epsilon schedule is linear then flat") {
  CHECK(epsilon_schedule(0, 100) == doctest::Approx(1.0));
  CHECK(epsilon_schedule(50, 100) == doctest::Approx(0.505));
  CHECK(epsilon_schedule(100, 100) == doctest::Approx(0.01));
  CHECK(epsilon_schedule(500, 100) == doctest::Approx(0.01));
}

TEST_CASE("greedy selection and argmax ties") {
  Rng rng(1);
  CHECK(argmax({1, 3, 3, 2}) == 1);
  CHECK(dqn_select({0, 5, 1}, 0.0, rng) == 1);
  std::vector<int> hits(3, 0);
  for (int i = 0; i < 3000; ++i) ++hits[dqn_select({0, 5, 1}, 1.0, rng)];
  for (int h : hits) CHECK(h > 800);
}

TEST_CASE("GAE by hand") {
  const auto g = gae({1, 2}, {0.5, 1, 3}, {false, true}, 0.9, 0.8);
  CHECK(g.advantages[1] == doctest::Approx(1.0));
  CHECK(g.returns[1] == doctest::Approx(2.0));
  CHECK(g.advantages[0] == doctest::Approx(2.12));
  CHECK(g.returns[0] == doctest::Approx(2.62));
  // lambda = 1 without termination is the discounted return minus the baseline
  const auto mc = gae({1, 1, 1}, {0, 0, 0, 10}, {false, false, false}, 0.5, 1.0);
  CHECK(mc.advantages[0] == doctest::Approx(1 + 0.5 + 0.25 + 0.125 * 10));
  CHECK_THROWS_AS(gae({1}, {0}, {false}, 0.9, 0.9), ShapeError);
}

TEST_CASE("advantage normalization") {
  std::vector<double> a{1, 2, 3, 4};
  normalize_advantages(a);
  double m = 0, v = 0;
  for (double x : a) m += x / 4;
  for (double x : a) v += (x - m) * (x - m) / 4;
  CHECK(m == doctest::Approx(0.0));
  CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("clipped surrogate") {
  CHECK(clipped_surrogate(1.5, 2.0, 0.2) == doctest::Approx(2.4));
  CHECK(clipped_surrogate(0.5, 2.0, 0.2) == doctest::Approx(1.0));
  CHECK(clipped_surrogate(0.5, -2.0, 0.2) == doctest::Approx(-1.6));
  CHECK(clipped_surrogate(1.5, -2.0, 0.2) == doctest::Approx(-3.0));
}

TEST_CASE("entropy of uniform logits") {
  CHECK(entropy_from_logits({3, 3, 3}) == doctest::Approx(std::log(3.0)));
  CHECK(entropy_from_logits({100, 0}) < 1e-6);
}

TEST_CASE("one hot encoding") {
  const Tensor t = one_hot({2, 0}, 3);
  CHECK(t == Tensor::matrix({{0, 0, 1}, {1, 0, 0}}));
}

TEST_CASE("replay buffer is a FIFO ring with distinct samples") {
  ReplayBuffer buf(3);
  for (std::size_t i = 0; i < 5; ++i) buf.push({i, 0, static_cast<double>(i), 0, false});
  CHECK(buf.size() == 3);
  CHECK(buf.at(0).s == 2);
  CHECK(buf.at(2).s == 4);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto batch = buf.sample(3, rng);
    std::set<std::size_t> seen;
    for (const auto& t : batch) seen.insert(t.s);
    CHECK(seen == std::set<std::size_t>{2, 3, 4});
  }
  CHECK_THROWS(buf.sample(4, rng));
}

TEST_CASE("zero budget gives an empty curve") {
  for (auto kind : {AgentKind::Dqn, AgentKind::Ppo, AgentKind::Sac}) {
    const auto r = train_agent(short_toy(), small_agent(kind, 0));
    CHECK(r.curve.empty());
    CHECK(r.policy.size() == 2);
  }
}

TEST_CASE("training is deterministic for a seed") {
  const MdpSpec m = short_toy();
  for (auto kind : {AgentKind::Dqn, AgentKind::Ppo, AgentKind::Sac}) {
    CAPTURE(to_string(kind));
    const auto a = train_agent(m, small_agent(kind, 400));
    const auto b = train_agent(m, small_agent(kind, 400));
    REQUIRE(a.curve.size() == 20);
    CHECK(curve_to_csv(a.curve) == curve_to_csv(b.curve));
    CHECK(policy_to_csv(a.policy) == policy_to_csv(b.policy));
    auto other = small_agent(kind, 400);
    other.seed = 6;
    CHECK(curve_to_csv(train_agent(m, other).curve) != curve_to_csv(a.curve));
  }
}

TEST_CASE("episode hook sees each recorded episode") {
  std::vector<EpisodeRecord> seen;
  const auto r = train_agent(short_toy(), small_agent(AgentKind::Dqn, 110), {},
                             [&](const EpisodeRecord& e) { seen.push_back(e); });
  CHECK(r.curve.size() == 5);  // the partial sixth episode is dropped
  REQUIRE(seen.size() == r.curve.size());
  for (std::size_t i = 0; i < seen.size(); ++i) CHECK(seen[i].total_reward == r.curve[i].total_reward);
}

TEST_CASE("DQN solves the two-state toy") {
  AgentConfig c = small_agent(AgentKind::Dqn, 6000);
  c.dqn.lr = 1e-3;
  c.dqn.gamma = 0.9;
  const auto r = train_agent(short_toy(), c);
  CHECK(r.greedy() == value_iteration(short_toy()).policy);
}

TEST_CASE("curve and policy CSV round trip") {
  std::vector<EpisodeRecord> curve{{0, 1.5, 0.9}, {1, -2.25, 0.5}};
  const auto back = curve_from_csv(curve_to_csv(curve));
  REQUIRE(back.size() == 2);
  CHECK(back[1].episode == 1);
  CHECK(back[1].total_reward == -2.25);
  CHECK(back[1].epsilon_or_entropy == 0.5);
  std::vector<PolicyRow> policy{{0, 2, {0.1, 0.2, 0.3}}, {1, 0, {1, 0, 0}}};
  CHECK(policy_actions_from_csv(policy_to_csv(policy)) == std::vector<std::size_t>{2, 0});
  CHECK_THROWS_AS(curve_from_csv("episode,total_reward,epsilon_or_entropy\n0,x,1\n"), DataError);
}

TEST_CASE("agent kind names") {
  CHECK(agent_kind_from_string("ppo") == AgentKind::Ppo);
  CHECK(to_string(AgentKind::Sac) == "sac");
  CHECK_THROWS_AS(agent_kind_from_string("a2c"), ValidationError);
}

TEST_CASE("repeated DQN updates on one terminal transition converge to its reward") {
  Rng init(4);
  DqnLearner learner(10, 3, DqnConfig{}, init);
  const std::vector<Transition> batch{{3, 1, 2.5, 7, true}};
  for (int i = 0; i < 3000; ++i) learner.update(batch);
  CHECK(std::abs(learner.q_values(3)[1] - 2.5) < 1e-3);
}
