#include <doctest.h>

#include <algorithm>

#include "rulmdp/pipeline.hpp"

using namespace rulmdp;
using nlohmann::json;

namespace {

bool has_field(const ConfigError& e, const std::string& field) {
  return std::any_of(e.errors().begin(), e.errors().end(), [&](const FieldError& f) { return f.field == field; });
}

json small_pipeline() {
  return json::parse(R"({
    "kind": "pipeline",
    "seed": 3,
    "data": {"synthetic": true, "units": 4, "min_life": 40, "max_life": 60, "window_len": 10, "eval_units": 2},
    "forecaster": {"d_model": 8, "n_heads": 2, "d_k": 4, "d_v": 4, "n_layers": 1, "d_ff": 8, "epochs": 1},
    "agent": {"steps": 0}
  })");
}

}  // namespace

TEST_CASE("defaults parse back to the built-in defaults") {
  json doc = run_config_defaults();
  doc["kind"] = "agent";
  const RunConfig c = parse_run_config(doc);
  const RunConfig d = parse_run_config(json{{"kind", "agent"}});
  CHECK(c.seed == d.seed);
  CHECK(c.agent.dqn.batch == d.agent.dqn.batch);
  CHECK(c.mdp.calibration.interval == 5);
  CHECK(c.mdp.calibration.restore == 50);
  CHECK(c.feedback.delta == d.feedback.delta);
  CHECK(c.federation.local_epochs == c.train.epochs);
}

TEST_CASE("config errors carry dotted field paths") {
  try {
    parse_run_config(json::parse(R"({"kind": "agent", "agent": {"kind": "a2c", "dqn": {"lr": -1, "bogus": 1}},
                                     "mdp": {"cost": [1, 2]}, "extra": true})"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(has_field(e, "agent.kind"));
    CHECK(has_field(e, "agent.dqn.lr"));
    CHECK(has_field(e, "agent.dqn.bogus"));
    CHECK(has_field(e, "mdp.cost"));
    CHECK(has_field(e, "extra"));
  }
}

TEST_CASE("kind is required and restricted") {
  CHECK_THROWS_AS(parse_run_config(json::object()), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"kind", "pipeline"}}, {"agent", "rlhf"}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json::array()), ConfigError);
  CHECK(parse_run_config(json{{"kind", "rlhf"}}).use_feedback);
  CHECK(parse_run_config(json{{"kind", "federation"}}).federate);
  CHECK_THROWS_AS(parse_run_config(json{{"kind", "agent"}, {"seed", "x"}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"kind", "agent"}, {"mdp", {{"restore", 0}}}}), ConfigError);
}

TEST_CASE("predictions regroup by unit") {
  std::vector<RulWindow> w(5);
  const std::uint32_t units[] = {1, 1, 2, 3, 3};
  for (std::size_t i = 0; i < 5; ++i) w[i].unit_id = units[i];
  const auto per = predictions_by_unit(w, {1, 2, 3, 4, 5});
  CHECK(per == std::vector<std::vector<double>>{{1, 2}, {3}, {4, 5}});
  CHECK_THROWS(predictions_by_unit(w, {1, 2}));
}

TEST_CASE("an inline spec is used as given") {
  json doc{{"kind", "agent"}, {"mdp", {{"spec", mdp_to_json(toy_mdp())}}}};
  const MdpSpec m = resolve_mdp(parse_run_config(doc));
  CHECK(m.n_states == 2);
  CHECK(value_iteration(m).values[0] == doctest::Approx(10.0));
}

TEST_CASE("partial histories stop before failure") {
  SyntheticFleetConfig fleet;
  fleet.units = 3;
  const auto h = synthetic_partial_histories(fleet, 3, 1);
  REQUIRE(h.size() == 3);
  for (const auto& [series, rul] : h) {
    CHECK(rul >= 0.0);
    CHECK_FALSE(series.records.empty());
  }
}

TEST_CASE("small end-to-end pipeline") {
  const RunConfig c = parse_run_config(small_pipeline());
  const PipelineReport r = run_pipeline(c);
  CHECK(r.policy_source == "optimal");
  CHECK(r.policy == r.optimal_policy);
  CHECK(r.optimal_policy.size() == kHealthStates);
  CHECK(r.forecaster_rmse > 0.0);
  REQUIRE(r.units.size() == 2);
  for (const auto& u : r.units) {
    CHECK(u.state < kHealthStates);
    CHECK(u.action == r.policy[u.state]);
    CHECK(u.action_name == r.action_names[u.action]);
    CHECK(u.true_rul.has_value());
  }
  const auto j = report_to_json(r);
  CHECK(j["units"].size() == 2);
  CHECK(j.contains("optimal_policy"));
  // same config, same report
  CHECK(report_to_json(run_pipeline(c)).dump() == j.dump());
}
