#include <doctest.h>

#include <cmath>

#include "rulmdp/errors.hpp"
#include "rulmdp/mdp.hpp"

using namespace rulmdp;

namespace {

// Gaussian elimination with partial pivoting on (I - gamma P_pi) V = R_pi.
std::vector<double> solve_policy(const MdpSpec& m, const std::vector<std::size_t>& pi) {
  const std::size_t n = m.n_states;
  std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
  for (std::size_t s = 0; s < n; ++s) {
    a[s][s] = 1.0;
    for (std::size_t s2 = 0; s2 < n; ++s2) a[s][s2] -= m.discount * m.p(s, pi[s], s2);
    a[s][n] = expected_reward(m, s, pi[s]);
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k <= n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::vector<double> v(n);
  for (std::size_t s = 0; s < n; ++s) v[s] = a[s][n] / a[s][s];
  return v;
}

// state == floor(predicted RUL), clipped to [0, 9]
StateFeaturizer identity_featurizer() {
  StateFeaturizer f;
  f.pca.mean = {0, 0, 0};
  f.pca.components = {{1, 0, 0}};
  f.pca.eigenvalues = {1};
  f.pca.total_variance = 1;
  for (int e = 1; e <= 9; ++e) f.edges.push_back(e);
  return f;
}

}  // namespace

TEST_CASE("toy value iteration") {
  const MdpSpec m = toy_mdp();
  const Solution sol = value_iteration(m, 1e-12);
  CHECK(sol.values[0] == doctest::Approx(10.0).epsilon(1e-10));
  CHECK(sol.values[1] == doctest::Approx(8.0).epsilon(1e-10));
  CHECK(sol.policy == std::vector<std::size_t>{0, 1});
  CHECK(bellman_residual(m, sol.values) < 1e-9);
}

TEST_CASE("policy evaluation matches a direct linear solve") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const MdpSpec m = random_mdp(6, 3, 0.9, rng);
    std::vector<std::size_t> pi(6);
    for (auto& a : pi) a = rng.uniform_int(3);
    const auto v = policy_evaluation(m, pi, 1e-12);
    const auto oracle = solve_policy(m, pi);
    for (std::size_t s = 0; s < 6; ++s) CHECK(v[s] == doctest::Approx(oracle[s]).epsilon(1e-8));
  }
}

TEST_CASE("optimal policy dominates every deterministic policy") {
  Rng rng(11);
  const MdpSpec m = random_mdp(3, 2, 0.8, rng);
  const auto sol = value_iteration(m, 1e-12);
  for (std::size_t code = 0; code < 8; ++code) {
    const std::vector<std::size_t> pi{code & 1, (code >> 1) & 1, (code >> 2) & 1};
    const auto v = solve_policy(m, pi);
    for (std::size_t s = 0; s < 3; ++s) CHECK(v[s] <= sol.values[s] + 1e-8);
  }
  const auto v_star = solve_policy(m, sol.policy);
  for (std::size_t s = 0; s < 3; ++s) CHECK(v_star[s] == doctest::Approx(sol.values[s]).epsilon(1e-8));
}

TEST_CASE("bellman residual on random specs") {
  Rng rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const MdpSpec m = random_mdp(10, 3, 0.99, rng);
    CHECK(bellman_residual(m, value_iteration(m).values) < 1e-8);
  }
}

TEST_CASE("reward uses bin center differences") {
  MdpSpec m;
  m.n_states = 2;
  m.n_actions = 2;
  m.action_names = {"a", "b"};
  m.P = {0.25, 0.75, 1, 0, 0, 1, 0.5, 0.5};
  m.cost = {0, 2};
  m.downtime = {0, 1};
  m.bin_centers = {10, 30};
  m.initial = {1, 0};
  m.weights = {0.5, 2.0, 3.0};
  m.validate();
  CHECK(reward(m, 0, 1, 1) == doctest::Approx(0.5 * 20 - 4 - 3));
  CHECK(reward(m, 1, 0, 0) == doctest::Approx(-10));
  CHECK(expected_reward(m, 0, 0) == doctest::Approx(0.75 * 10));
  CHECK(expected_reward(m, 1, 1) == doctest::Approx(0.5 * -10 - 7));
}

TEST_CASE("spec validation") {
  MdpSpec m = toy_mdp();
  m.P[0] = 0.5;
  CHECK_THROWS_AS(m.validate(), ValidationError);
  m = toy_mdp();
  m.discount = 1.0;
  CHECK_THROWS_AS(m.validate(), ValidationError);
  m = toy_mdp();
  m.cost = {0, -1};
  CHECK_THROWS_AS(m.validate(), ValidationError);
}

TEST_CASE("spec JSON round trip") {
  Rng rng(5);
  const MdpSpec m = random_mdp(4, 3, 0.95, rng);
  const MdpSpec back = mdp_from_json(nlohmann::json::parse(mdp_to_json(m).dump()));
  CHECK(back.P == m.P);
  CHECK(back.rul_gain == m.rul_gain);
  CHECK(back.discount == m.discount);
  CHECK(back.action_names == m.action_names);
  CHECK(value_iteration(back).values == value_iteration(m).values);
}

TEST_CASE("episode return agrees with Monte Carlo rollouts") {
  Rng rng(9);
  MdpSpec m = random_mdp(5, 2, 0.9, rng);
  m.episode_len = 30;
  m.initial = {0.4, 0.1, 0.2, 0.2, 0.1};
  const std::vector<std::size_t> pi{0, 1, 1, 0, 1};
  const double exact = episode_return(m, pi);
  MaintenanceEnv env(m, 21);
  const int episodes = 20000;
  double total = 0, total_sq = 0;
  for (int e = 0; e < episodes; ++e) {
    std::size_t s = env.reset();
    double g = 0;
    for (;;) {
      const auto out = env.step(pi[s]);
      g += out.reward;
      s = out.next_state;
      if (out.truncated) break;
    }
    total += g;
    total_sq += g * g;
  }
  const double mean = total / episodes;
  const double se = std::sqrt((total_sq / episodes - mean * mean) / episodes);
  CHECK(std::abs(mean - exact) < 4 * se);
}

TEST_CASE("environment is deterministic per seed and enforces reset") {
  const MdpSpec m = toy_mdp();
  MaintenanceEnv a(m, 4), b(m, 4);
  CHECK_THROWS_AS(a.step(0), Error);
  for (int e = 0; e < 5; ++e) {
    CHECK(a.reset() == b.reset());
    for (int t = 0; t < 10; ++t) {
      const auto x = a.step(t % 2), y = b.step(t % 2);
      CHECK(x.next_state == y.next_state);
      CHECK(x.reward == y.reward);
    }
  }
  MdpSpec short_ep = toy_mdp();
  short_ep.episode_len = 2;
  MaintenanceEnv c(short_ep, 1);
  c.reset();
  CHECK_FALSE(c.step(0).truncated);
  CHECK(c.step(0).truncated);
  CHECK_THROWS_AS(c.step(0), Error);
}

TEST_CASE("sampled transitions follow the row distribution") {
  Rng rng(13);
  const MdpSpec m = random_mdp(4, 2, 0.9, rng);
  Rng draw(99);
  std::vector<double> freq(4, 0.0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) freq[step(m, 2, 1, draw).next_state] += 1.0 / n;
  for (std::size_t s2 = 0; s2 < 4; ++s2) CHECK(freq[s2] == doctest::Approx(m.p(2, 1, s2)).epsilon(0.05));
  CHECK_THROWS_AS(step(m, 4, 0, draw), ValidationError);
}

TEST_CASE("calibration sequences from a hand trajectory") {
  const StateFeaturizer f = identity_featurizer();
  // states 9, 7, 5, 3, 1
  const std::vector<std::vector<double>> units{{9.5, 7.5, 5.5, 3.5, 1.5}};
  const auto data = build_calibration(f, units, {1, 2});
  const std::vector<std::size_t> states{9, 7, 5, 3, 1};
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> expect;
  for (std::size_t t = 0; t < 5; ++t) {
    if (t + 1 < 5) expect.emplace_back(states[t], 0, states[t + 1]);
    const std::size_t back = t + 1 > 2 ? t + 1 - 2 : 0;
    expect.emplace_back(states[t], 1, states[back]);
    expect.emplace_back(states[t], 2, states[0]);
  }
  REQUIRE(data.transitions.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(data.transitions[i].s == std::get<0>(expect[i]));
    CHECK(data.transitions[i].a == std::get<1>(expect[i]));
    CHECK(data.transitions[i].s_next == std::get<2>(expect[i]));
  }
  CHECK(data.initial[9] == doctest::Approx(0.2));
  CHECK(data.initial[0] == 0.0);
  CHECK(data.bin_centers[7] == doctest::Approx(7.5));
  // empty bins borrow the nearest populated bin below
  CHECK(data.bin_centers[8] == doctest::Approx(7.5));
  CHECK(data.bin_centers[0] == doctest::Approx(1.5));
  CHECK_THROWS_AS(build_calibration(f, units, {0, 2}), ValidationError);
  CHECK_THROWS_AS(build_calibration(f, units, {1, 0}), ValidationError);
  CHECK_THROWS_AS(build_calibration(f, {{}}, {1, 2}), ValidationError);
}

TEST_CASE("calibrated probabilities are smoothed counts") {
  CalibrationData data;
  data.bin_centers.resize(kHealthStates);
  for (std::size_t s = 0; s < kHealthStates; ++s) data.bin_centers[s] = 10.0 * s;
  data.initial.assign(kHealthStates, 0.1);
  for (int i = 0; i < 3; ++i) data.transitions.push_back({4, 0, 3});
  data.transitions.push_back({4, 0, 4});
  std::vector<std::string> warnings;
  const MdpSpec m = calibrate_mdp(data, MdpCosts{}, RewardWeights{}, 1.0, &warnings);
  CHECK(m.p(4, 0, 3) == doctest::Approx(4.0 / 14.0));
  CHECK(m.p(4, 0, 4) == doctest::Approx(2.0 / 14.0));
  CHECK(m.p(4, 0, 9) == doctest::Approx(1.0 / 14.0));
  CHECK(m.p(0, 2, 5) == doctest::Approx(0.1));
  CHECK_FALSE(warnings.empty());
  const MdpSpec raw = calibrate_mdp(data, MdpCosts{}, RewardWeights{}, 0.0);
  CHECK(raw.p(4, 0, 3) == doctest::Approx(0.75));
  CHECK(raw.p(4, 0, 9) == 0.0);
  double g = 0;
  for (std::size_t s2 = 0; s2 < kHealthStates; ++s2) g += m.p(4, 0, s2) * (10.0 * s2 - 40.0);
  CHECK(m.gain(4, 0) == doctest::Approx(g));
}

TEST_CASE("rule recommender threshold is strict") {
  CHECK(rule_based_recommend(9.99, 10) == RuleRecommendation::ImmediateMaintenance);
  CHECK(rule_based_recommend(10, 10) == RuleRecommendation::PeriodicInspection);
  CHECK(to_string(RuleRecommendation::ImmediateMaintenance) == "ImmediateMaintenance");
  CHECK_THROWS_AS(rule_based_recommend(5, 0), ValidationError);
}
