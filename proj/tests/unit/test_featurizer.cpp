#include <doctest.h>

#include <cmath>

#include "rulmdp/errors.hpp"
#include "rulmdp/featurizer.hpp"
#include "rulmdp/rng.hpp"

using namespace rulmdp;

namespace {

// Leading eigenvector by power iteration, an oracle independent of the solver.
std::vector<double> power_iteration(const std::vector<std::vector<double>>& a) {
  std::vector<double> v(a.size(), 1.0);
  for (int it = 0; it < 5000; ++it) {
    std::vector<double> w(a.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a.size(); ++j) w[i] += a[i][j] * v[j];
    double n = 0;
    for (double x : w) n += x * x;
    n = std::sqrt(n);
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / n;
  }
  if (v[0] < 0)
    for (double& x : v) x = -x;
  return v;
}

}  // namespace

TEST_CASE("rul features by hand") {
  const Tensor f = rul_features({10, 8, 6}, 2);
  CHECK(f == Tensor::matrix({{10, 0, 10}, {8, -2, 9}, {6, -2, 7}}));
  CHECK_THROWS_AS(rul_features({1}, 0), ValidationError);
}

TEST_CASE("PCA on an axis-aligned cloud") {
  const Tensor x = Tensor::matrix({{2, 0}, {-2, 0}, {0, 1}, {0, -1}});
  const Pca p = fit_pca(x, 2);
  CHECK(p.eigenvalues[0] == doctest::Approx(8.0 / 3));
  CHECK(p.eigenvalues[1] == doctest::Approx(2.0 / 3));
  CHECK(p.explained_variance_ratio(0) == doctest::Approx(0.8));
  CHECK(p.components[0][0] == doctest::Approx(1.0));
  CHECK(std::abs(p.components[0][1]) < 1e-12);
  const double row[2] = {3, 5};
  CHECK(p.project(row, 0) == doctest::Approx(3.0));
  CHECK(p.project(row, 1) == doctest::Approx(5.0));
}

TEST_CASE("PCA leading component matches power iteration") {
  Rng rng(11);
  Tensor x({300, 3});
  for (std::size_t i = 0; i < 300; ++i) {
    const double t = rng.normal();
    x(i, 0) = 3 * t + 0.3 * rng.normal();
    x(i, 1) = -t + 0.3 * rng.normal();
    x(i, 2) = 0.5 * t + 0.3 * rng.normal();
  }
  const Pca p = fit_pca(x, 2);
  std::vector<std::vector<double>> cov(3, std::vector<double>(3));
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      double s = 0;
      for (std::size_t i = 0; i < 300; ++i) s += (x(i, a) - p.mean[a]) * (x(i, b) - p.mean[b]);
      cov[a][b] = s / 299;
    }
  const auto v = power_iteration(cov);
  for (std::size_t j = 0; j < 3; ++j) CHECK(p.components[0][j] == doctest::Approx(v[j]).epsilon(1e-8));
  double dot = 0;
  for (std::size_t j = 0; j < 3; ++j) dot += p.components[0][j] * p.components[1][j];
  CHECK(std::abs(dot) < 1e-10);
}

TEST_CASE("PCA preconditions") {
  CHECK_THROWS_AS(fit_pca(Tensor::matrix({{1, 2}, {3, 4}}), 2), ValidationError);
  CHECK_THROWS_AS(fit_pca(Tensor::matrix({{1, 1}, {2, 2}, {3, 3}, {4, 4}}), 2), ValidationError);
  CHECK_THROWS_AS(fit_pca(Tensor::matrix({{1, 1}, {2, 2}}), 3), ValidationError);
}

TEST_CASE("decile edges and binning") {
  std::vector<double> v;
  for (int i = 0; i <= 100; ++i) v.push_back(i);
  const auto e = decile_edges(v);
  REQUIRE(e.size() == 9);
  for (std::size_t k = 0; k < 9; ++k) CHECK(e[k] == doctest::Approx(10.0 * (k + 1)));
  CHECK(bin_index(e, -5) == 0);
  CHECK(bin_index(e, 9.99) == 0);
  CHECK(bin_index(e, 10) == 1);
  CHECK(bin_index(e, 95) == 9);
  const auto tied = decile_edges(std::vector<double>(20, 5.0));
  for (std::size_t k = 1; k < tied.size(); ++k) CHECK(tied[k] > tied[k - 1]);
}

TEST_CASE("featurizer maps healthy high and failing to 0, and round trips") {
  // Forecaster-like trajectories: capped linear decay plus noise, so the
  // plateau rows are not exactly tied.
  Rng rng(3);
  std::vector<std::vector<double>> units;
  for (int u = 0; u < 5; ++u) {
    std::vector<double> pred;
    const int life = 150 + 20 * u;
    for (int t = 0; t < life; ++t) pred.push_back(std::min(125.0, static_cast<double>(life - t)) + 0.5 * rng.normal());
    units.push_back(pred);
  }
  const auto f = fit_featurizer(units);
  const auto states = f.discretize_sequence(units[0]);
  // the plateau (about a third of the rows) fills the upper bins
  CHECK(states.front() >= 5);
  CHECK(states.back() == 0);
  std::vector<int> counts(10);
  for (const auto& u : units)
    for (auto s : f.discretize_sequence(u)) ++counts[s];
  for (int c : counts) CHECK(c > 0);

  const auto g = featurizer_from_json(nlohmann::json::parse(featurizer_to_json(f).dump()));
  CHECK(g.discretize_sequence(units[2]) == f.discretize_sequence(units[2]));
  CHECK(g.edges == f.edges);
}
