#include <doctest.h>

#include <sstream>

#include "rulmdp/errors.hpp"
#include "rulmdp/ingest.hpp"
#include "rulmdp/synthetic.hpp"

using namespace rulmdp;

namespace {

std::string record_line(int unit, int cycle, double base = 0.0) {
  std::ostringstream s;
  s << unit << " " << cycle;
  for (std::size_t i = 0; i < kRawFeatures; ++i) s << " " << base + i + 0.01 * cycle;
  s << "\n";
  return s.str();
}

SyntheticFleetConfig small_fleet() {
  SyntheticFleetConfig c;
  c.units = 4;
  c.min_life = 40;
  c.max_life = 160;
  return c;
}

}  // namespace

TEST_CASE("parse keeps units in order of first appearance") {
  std::string text = record_line(3, 1) + record_line(3, 2) + "\n" + record_line(1, 1) + record_line(3, 3);
  const auto units = parse_cmapss_text(text);
  REQUIRE(units.size() == 2);
  CHECK(units[0].unit_id == 3);
  CHECK(units[0].failure_cycle == 3);
  CHECK(units[1].unit_id == 1);
  CHECK(units[0].records[1].sensors[0] == doctest::Approx(3.02));
}

TEST_CASE("parse errors name the line") {
  SUBCASE("wrong column count") {
    try {
      parse_cmapss_text(record_line(1, 1) + "1 2 3\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("non-numeric field") {
    std::string bad = record_line(1, 1);
    bad.replace(bad.find(' ', 4), 2, " x");
    CHECK_THROWS_AS(parse_cmapss_text(bad), ParseError);
  }
  SUBCASE("cycle gap") { CHECK_THROWS_AS(parse_cmapss_text(record_line(1, 1) + record_line(1, 3)), ParseError); }
  SUBCASE("fractional unit id") {
    std::string bad = record_line(1, 1);
    bad.replace(0, 1, "1.5");
    CHECK_THROWS_AS(parse_cmapss_text(bad), ParseError);
  }
  CHECK_THROWS_AS(load_cmapss("/nonexistent/train.txt"), DataError);
}

TEST_CASE("write and parse round trip") {
  const auto units = synthetic_fleet(small_fleet());
  CHECK(parse_cmapss_text(write_cmapss(units)) == units);
}

TEST_CASE("labeling law holds exhaustively on a synthetic fleet") {
  auto cfg = small_fleet();
  cfg.units = 12;
  for (double cap : {1.0, 30.0, 125.0, 1000.0}) {
    for (const auto& u : synthetic_fleet(cfg)) {
      const auto labels = label_rul(u, cap);
      REQUIRE(labels.size() == u.length());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const double exact = static_cast<double>(u.failure_cycle) - labels[i].first;
        CHECK(labels[i].second <= cap);
        CHECK(labels[i].second == (exact < cap ? exact : cap));
        if (i) CHECK(labels[i].second <= labels[i - 1].second);
      }
      CHECK(labels.back().second == 0.0);
    }
  }
  CHECK_THROWS_AS(label_rul(synthetic_fleet(cfg)[0], 0.0), ValidationError);
}

TEST_CASE("normalizer drops constant features and z-scores the rest") {
  const auto units = synthetic_fleet(small_fleet());
  const auto stats = fit_normalizer(units);
  // Setting 3 and the last two sensors are constant by construction.
  CHECK(stats.dropped == std::vector<std::size_t>{2, kRawFeatures - 2, kRawFeatures - 1});
  Tensor all;
  std::vector<double> sum(stats.feature_dim()), sq(stats.feature_dim());
  std::size_t n = 0;
  for (const auto& u : units) {
    const auto x = apply_normalizer(u, stats);
    for (std::size_t t = 0; t < x.rows(); ++t, ++n)
      for (std::size_t j = 0; j < x.cols(); ++j) {
        sum[j] += x(t, j);
        sq[j] += x(t, j) * x(t, j);
      }
  }
  for (std::size_t j = 0; j < stats.feature_dim(); ++j) {
    CHECK(std::abs(sum[j] / n) < 1e-10);
    CHECK(sq[j] / n == doctest::Approx(1.0).epsilon(1e-10));
  }
  const auto x = apply_normalizer(units[0], stats);
  const auto back = denormalize(x, stats);
  for (std::size_t j = 0; j < stats.feature_dim(); ++j)
    CHECK(back(5, j) == doctest::Approx(units[0].records[5].feature(stats.retained[j])));
}

TEST_CASE("windows: one per cycle from window_len on, left-padded for short units") {
  const auto units = synthetic_fleet(small_fleet());
  const auto stats = fit_normalizer(units);
  const auto w = make_windows(units[0], stats, 30, 125.0);
  REQUIRE(w.size() == units[0].length() - 29);
  CHECK(w.front().end_cycle == 30);
  CHECK(w.back().target_rul == 0.0);
  CHECK_FALSE(w.front().padded);
  const auto x = apply_normalizer(units[0], stats);
  CHECK(w[3].inputs(29, 0) == x(32, 0));
  CHECK(w[3].inputs(0, 0) == x(3, 0));

  UnitSeries shorty = units[0];
  shorty.records.resize(5);
  shorty.failure_cycle = 5;
  const auto p = make_windows(shorty, stats, 30, 125.0);
  REQUIRE(p.size() == 5);
  CHECK(p[0].padded);
  CHECK(p[2].inputs(0, 1) == x(0, 1));
  CHECK(p[2].inputs(29, 1) == x(2, 1));
  CHECK(p[2].target_rul == 2.0);  // failure at 5, end cycle 3
}

TEST_CASE("windows CSV and stats JSON round trip") {
  const auto units = synthetic_fleet(small_fleet());
  const auto stats = fit_normalizer(units);
  const auto w = make_windows(units, stats, 8, 125.0);
  const auto back = windows_from_csv(windows_to_csv(w));
  REQUIRE(back.size() == w.size());
  for (std::size_t i = 0; i < w.size(); i += 37) {
    CHECK(back[i].inputs == w[i].inputs);
    CHECK(back[i].unit_id == w[i].unit_id);
    CHECK(back[i].end_cycle == w[i].end_cycle);
    CHECK(back[i].target_rul == w[i].target_rul);
  }
  const auto s2 = norm_stats_from_json(nlohmann::json::parse(norm_stats_to_json(stats).dump()));
  CHECK(s2.mean == stats.mean);
  CHECK(s2.stddev == stats.stddev);
  CHECK(s2.retained == stats.retained);
}

TEST_CASE("synthetic fleets share the design across seeds") {
  auto a = small_fleet(), b = small_fleet();
  b.seed = 7;
  const auto fa = synthetic_fleet(a), fb = synthetic_fleet(b);
  // Constant sensors sit at the design baseline regardless of the unit seed.
  CHECK(fa[0].records[0].sensors[kSensors - 1] == fb[1].records[3].sensors[kSensors - 1]);
  CHECK(synthetic_fleet(a) == fa);
  CHECK_FALSE(fa == fb);
}
