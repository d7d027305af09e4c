#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rulmdp/agents.hpp"
#include "rulmdp/errors.hpp"
#include "rulmdp/ingest.hpp"
#include "rulmdp/mdp.hpp"
#include "rulmdp/pipeline.hpp"

namespace py = pybind11;
using namespace rulmdp;

namespace {

// JSON crosses the boundary as text; the Python side parses it.
MdpSpec spec_from_text(const std::string& text) { return mdp_from_json(nlohmann::json::parse(text)); }

py::dict solve(const std::string& spec_json, double tol) {
  const MdpSpec spec = spec_from_text(spec_json);
  Solution sol;
  {
    py::gil_scoped_release release;
    sol = value_iteration(spec, tol);
  }
  py::dict d;
  d["values"] = sol.values;
  d["policy"] = sol.policy;
  d["iterations"] = sol.iterations;
  std::vector<std::string> names;
  for (auto a : sol.policy) names.push_back(spec.action_names.at(a));
  d["policy_names"] = names;
  return d;
}

py::dict agent(const std::string& spec_json, const std::string& kind, std::size_t steps, std::uint64_t seed) {
  const MdpSpec spec = spec_from_text(spec_json);
  AgentConfig c;
  c.kind = agent_kind_from_string(kind);
  c.budget_steps = steps;
  c.seed = seed;
  AgentResult r;
  {
    py::gil_scoped_release release;
    r = train_agent(spec, c);
  }
  std::vector<double> returns;
  for (const auto& e : r.curve) returns.push_back(e.total_reward);
  py::dict d;
  d["returns"] = returns;
  d["greedy"] = r.greedy();
  return d;
}

std::string pipeline(const std::string& config_json) {
  const RunConfig cfg = parse_run_config(nlohmann::json::parse(config_json), {"pipeline"});
  PipelineReport report;
  {
    py::gil_scoped_release release;
    report = run_pipeline(cfg);
  }
  return report_to_json(report).dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "RUL forecasting, maintenance MDP and agents (C++ core)";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);

  m.def("toy_mdp_json", [] { return mdp_to_json(toy_mdp()).dump(); });
  m.def("load_mdp_json", [](const std::string& path) { return mdp_to_json(load_mdp(path)).dump(); });
  m.def("value_iteration", &solve, py::arg("spec_json"), py::arg("tol") = 1e-10);
  m.def("bellman_residual", [](const std::string& spec_json, const std::vector<double>& values) {
    return bellman_residual(spec_from_text(spec_json), values);
  });
  m.def("episode_return", [](const std::string& spec_json, const std::vector<std::size_t>& policy) {
    return episode_return(spec_from_text(spec_json), policy);
  });
  m.def("train_agent", &agent, py::arg("spec_json"), py::arg("kind"), py::arg("steps"), py::arg("seed") = 42);
  m.def("piecewise_rul", &piecewise_rul, py::arg("failure_cycle"), py::arg("cycle"),
        py::arg("rul_cap") = kDefaultRulCap);
  m.def("rule_recommend", [](double rul, double threshold) { return to_string(rule_based_recommend(rul, threshold)); },
        py::arg("predicted_rul"), py::arg("threshold") = 10.0);
  m.def("run_config_defaults_json", [] { return run_config_defaults().dump(); });
  m.def("run_pipeline_json", &pipeline, py::arg("config_json"));
  m.attr("ACTION_NAMES") = maintenance_action_names();
}
