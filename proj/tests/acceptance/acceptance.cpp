// One PASS/FAIL line per acceptance criterion. Exit status 1 if any fails.
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/federation.hpp"
#include "rulmdp/pipeline.hpp"

using namespace rulmdp;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// Runs `fn`; an exception is a failure of that criterion, not of the suite.
void criterion(const std::string& name, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(false, name, std::string("threw: ") + e.what());
  }
}

Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// ---------------------------------------------------------------- gradients

double transformer_grad_error(bool decoder) {
  TransformerConfig c;
  c.feature_dim = 3;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_k = 4;
  c.d_v = 4;
  c.n_layers = 1;
  c.d_ff = 8;
  c.window_len = 4;
  c.dropout = 0.0;
  c.use_decoder = decoder;
  TransformerModel model(c, 17);
  Rng rng(18);
  const Tensor w1 = random_tensor({4, 3}, rng), w2 = random_tensor({4, 3}, rng);
  const Tensor target = Tensor::matrix({{0.3}, {0.8}});
  const std::vector<const Tensor*> batch{&w1, &w2};
  auto loss_value = [&] {
    Tape t;
    Var pred = forward_batch(t, model, batch, false, nullptr);
    return sum(square(sub(pred, t.constant(target)))).value().item();
  };
  model.params().zero_grad();
  {
    Tape t;
    Var pred = forward_batch(t, model, batch, true, nullptr);
    t.backward(sum(square(sub(pred, t.constant(target)))));
  }
  const double h = 1e-5;
  double worst = 0.0;
  for (auto& [name, p] : model.params()) {
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value[k];
      p.value[k] = orig + h;
      const double up = loss_value();
      p.value[k] = orig - h;
      const double down = loss_value();
      p.value[k] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad[k];
      const double denom = std::max(std::abs(numeric) + std::abs(analytic), 1e-6);
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

void gradient_correctness() {
  const auto t0 = Clock::now();
  const double enc = transformer_grad_error(false);
  const double dec = transformer_grad_error(true);
  const double secs = seconds_since(t0);
  const bool ok = enc < 1e-4 && dec < 1e-4 && secs < 10.0;
  report(ok, "gradient correctness",
         fmt("max rel err encoder %.2e, encoder-decoder %.2e (< 1e-4); %.1f s (< 10 s)", enc, dec, secs));
}

// ---------------------------------------------------------------- attention

void attention_normalization() {
  TransformerConfig c;
  c.feature_dim = 3;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_k = 4;
  c.d_v = 4;
  c.n_layers = 1;
  c.d_ff = 8;
  c.use_decoder = true;
  TransformerModel model(c, 5);
  Rng rng(6);
  double worst = 0.0;
  std::size_t leaks = 0;
  auto check_rows = [&](const std::vector<Tensor>& weights) {
    for (const auto& w : weights)
      for (std::size_t r = 0; r < w.rows(); ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < w.cols(); ++k) s += w(r, k);
        worst = std::max(worst, std::abs(s - 1.0));
      }
  };
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.uniform_int(9), m = 1 + rng.uniform_int(6);
    const double scale = std::exp(rng.uniform(-2.0, 3.0));
    const Tensor x = random_tensor({n, 8}, rng, scale);
    check_rows(self_attention(x, model, "enc0.attn", false).weights);

    const auto masked = self_attention(x, model, "dec0.self", true);
    check_rows(masked.weights);
    const std::size_t cut = rng.uniform_int(n);  // rows >= cut are perturbed
    Tensor moved = x;
    for (std::size_t r = cut; r < n; ++r)
      for (std::size_t k = 0; k < 8; ++k) moved(r, k) += rng.normal() * 10.0;
    const auto after = self_attention(moved, model, "dec0.self", true);
    for (std::size_t r = 0; r < cut; ++r)
      for (std::size_t k = 0; k < 8; ++k) leaks += after.output(r, k) != masked.output(r, k);

    const Tensor enc = random_tensor({n, 8}, rng, scale), dec = random_tensor({m, 8}, rng, scale);
    check_rows(cross_attention(dec, enc, model, "dec0.cross").weights);
  }
  report(worst <= 1e-9 && leaks == 0, "attention normalization",
         fmt("3000 inputs, max |row sum - 1| = %.1e (<= 1e-9); causal leakage %zu entries (0)", worst, leaks));
}

// ---------------------------------------------------------------- value iteration

void value_iteration_oracle() {
  const auto t0 = Clock::now();
  const MdpSpec toy = load_mdp(std::string(RULMDP_DATA_DIR) + "/toy2.mdp.json");
  const Solution sol = value_iteration(toy);
  const double verr = std::max(std::abs(sol.values[0] - 10.0), std::abs(sol.values[1] - 8.0));
  const bool pi_ok = toy.action_names[sol.policy[0]] == "keep" && toy.action_names[sol.policy[1]] == "repair";
  Rng rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    MdpSpec m = random_mdp(10, 3, 0.99, rng);
    m.episode_len = 10;
    worst = std::max(worst, bellman_residual(m, value_iteration(m).values));
  }
  const double secs = seconds_since(t0);
  report(verr <= 1e-8 && pi_ok && worst < 1e-8 && secs < 5.0, "value iteration oracle",
         fmt("toy |V - (10,8)| = %.1e, pi %s; max residual over 100 specs %.1e (< 1e-8); %.2f s (< 5 s)", verr,
             pi_ok ? "(keep, repair)" : "WRONG", worst, secs));
}

// ---------------------------------------------------------------- labeling

void labeling_law() {
  std::size_t units = 0, rows = 0, violations = 0;
  Rng rng(77);
  auto check = [&](const std::vector<UnitSeries>& fleet, double cap) {
    for (const auto& u : fleet) {
      ++units;
      const auto labels = label_rul(u, cap);
      for (std::size_t i = 0; i < labels.size(); ++i, ++rows) {
        const double below = static_cast<double>(u.failure_cycle) - labels[i].first;
        bool ok = labels[i].second <= cap;
        ok &= below < cap ? labels[i].second == below : labels[i].second == cap;
        if (i) ok &= labels[i].second <= labels[i - 1].second;
        violations += !ok;
      }
    }
  };
  for (int trial = 0; trial < 40; ++trial) {
    SyntheticFleetConfig f;
    f.units = 1 + rng.uniform_int(8);
    f.min_life = 2 + static_cast<std::uint32_t>(rng.uniform_int(100));
    f.max_life = f.min_life + static_cast<std::uint32_t>(rng.uniform_int(300));
    f.seed = trial;
    const double cap = 1.0 + rng.uniform_int(400);
    // also through the text format, where labels come from parsed cycles
    check(parse_cmapss_text(write_cmapss(synthetic_fleet(f))), cap);
  }
  report(violations == 0, "labeling law",
         fmt("%zu units, %zu cycles, %zu violations of monotone / capped / T_f - t", units, rows, violations));
}

// ---------------------------------------------------------------- federation

ParamSet dyadic_set(Rng& rng) {
  ParamSet p;
  for (const char* name : {"a", "b", "c"}) {
    Tensor t({3, 4});
    for (auto& v : t.data()) v = static_cast<double>(static_cast<long>(rng.uniform_int(2048)) - 1024) / 64.0;
    p.add(name, t);
  }
  return p;
}

bool same_values(const ParamSet& a, const ParamSet& b) {
  for (const auto& [name, p] : a)
    if (!(p.value == b.at(name).value)) return false;
  return true;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RULMDP_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return read_file(p); }

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("rulmdp_accept_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void federation_identities() {
  Rng rng(31);
  bool identical_ok = true;
  for (std::size_t k : {1, 2, 3, 5, 8}) {
    const ParamSet p = dyadic_set(rng);
    identical_ok &= same_values(aggregate(std::vector<ParamSet>(k, p)), p);
  }
  bool perm_ok = true;
  std::vector<ParamSet> sets;
  for (int i = 0; i < 6; ++i) {
    ParamSet p;
    p.add("w", random_tensor({4, 5}, rng));
    sets.push_back(std::move(p));
  }
  const ParamSet base = aggregate(sets);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ParamSet> shuffled;
    for (auto i : rng.permutation(sets.size())) shuffled.push_back(sets[i]);
    perm_ok &= same_values(aggregate(shuffled), base);
  }
  const fs::path dir = scratch("fed");
  const std::string d = " --dir " + dir.string() + " --seed 9";
  bool cli_ok = run_cli("ingest --synthetic --units 5 --seed 9 --out " + dir.string()) == 0;
  cli_ok &= run_cli("train-forecaster --epochs 2" + d) == 0;
  const std::string single = slurp(dir / "model.ckpt.json");
  cli_ok &= run_cli("federate --machines 1 --rounds 1 --local-epochs 2" + d) == 0;
  cli_ok &= slurp(dir / "model.ckpt.json") == single;
  fs::remove_all(dir);
  report(identical_ok && perm_ok && cli_ok, "federation identities",
         fmt("identical-set aggregate exact: %s; permutation invariance bit-exact: %s; "
             "federate 1x1 checkpoint byte-identical to train-forecaster: %s",
             identical_ok ? "yes" : "no", perm_ok ? "yes" : "no", cli_ok ? "yes" : "no"));
}

// ---------------------------------------------------------------- forecaster and calibrated MDP

struct Phase1 {
  ForecastStage stage;
  MdpSpec spec;
};

double rmse_of(const std::vector<RulWindow>& w, const std::vector<double>& pred) {
  return evaluate_predictions(w, pred).rmse;
}

Phase1 forecaster_utility() {
  RunConfig cfg = parse_run_config(nlohmann::json{{"kind", "pipeline"}, {"data", {{"synthetic", true}}}});
  const auto t0 = Clock::now();
  ForecastStage stage = run_forecast(cfg);
  const double secs = seconds_since(t0);

  // Held-out fleet from the same engine design.
  SyntheticFleetConfig held = cfg.data.synth;
  held.seed = cfg.data.synth.seed + 1000;
  const auto units = synthetic_fleet(held);
  const auto windows = make_windows(units, stage.data.stats, cfg.data.window_len, cfg.data.rul_cap);
  const double model_rmse = rmse_of(windows, predict_all(stage.model, windows));
  const double persist = rmse_of(windows, persistence_baseline(windows, cfg.data.rul_cap));
  report(model_rmse <= 0.5 * persist && secs < 120.0, "forecaster utility",
         fmt("held-out RMSE %.2f vs persistence %.2f (ratio %.3f <= 0.5); training RMSE %.2f; %.1f s (< 120 s)",
             model_rmse, persist, model_rmse / persist, stage.rmse, secs));

  const auto cal = calibrate_from_predictions(predictions_by_unit(stage.data.windows, stage.predictions), cfg.mdp);
  return {std::move(stage), cal.spec};
}

// ---------------------------------------------------------------- agents

void agent_agreement(const MdpSpec& spec) {
  const Solution opt = value_iteration(spec);
  const double optimal_return = episode_return(spec, opt.policy);
  for (auto kind : {AgentKind::Dqn, AgentKind::Ppo, AgentKind::Sac}) {
    const std::string name = "agent agreement " + to_string(kind);
    criterion(name, [&] {
      AgentConfig a;
      a.kind = kind;
      a.budget_steps = 50'000;
      a.seed = 42;
      const auto t0 = Clock::now();
      const auto r = train_agent(spec, a);
      const double secs = seconds_since(t0);
      const auto greedy = r.greedy();
      std::size_t agree = 0;
      for (std::size_t s = 0; s < greedy.size(); ++s) agree += greedy[s] == opt.policy[s];
      const double ret = episode_return(spec, greedy);
      report(agree >= 9 && ret >= 0.95 * optimal_return && secs < 300.0, name,
             fmt("%zu/10 states agree (>= 9); greedy return %.4f vs optimal %.4f (ratio %.4f >= 0.95); %.1f s (< 300 s)",
                 agree, ret, optimal_return, ret / optimal_return, secs));
    });
  }
}

// ---------------------------------------------------------------- RLHF

double stddev(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void tail_returns(const std::vector<EpisodeRecord>& curve, std::vector<double>& out) {
  const std::size_t from = curve.size() - curve.size() / 5;
  for (std::size_t i = from; i < curve.size(); ++i) out.push_back(curve[i].total_reward);
}

void rlhf_stability(const MdpSpec& spec) {
  const auto optimal = value_iteration(spec).policy;
  std::vector<double> shaped_tail, base_tail;
  bool identical = true;
  for (std::uint64_t seed = 42; seed < 47; ++seed) {
    AgentConfig a;
    a.kind = AgentKind::Dqn;
    a.budget_steps = 50'000;
    a.seed = seed;
    const auto base = train_agent(spec, a);
    FeedbackConfig f;
    f.feedback_rate = 1.0;
    f.delta = 0.0;
    const auto zero = train_rlhf(spec, a, f, oracle_provider(optimal));
    identical &= curve_to_csv(zero.agent.curve) == curve_to_csv(base.curve);
    f.delta = 0.5;
    const auto shaped = train_rlhf(spec, a, f, oracle_provider(optimal));
    tail_returns(base.curve, base_tail);
    tail_returns(shaped.agent.curve, shaped_tail);
  }
  const double sd_shaped = stddev(shaped_tail), sd_base = stddev(base_tail);
  // pooled over seeds; 1e-9 absorbs summation-order noise only
  report(sd_shaped <= sd_base + 1e-9 && identical, "RLHF stability",
         fmt("sd of last-20%% returns over seeds 42-46: delta=0.5 %.4f vs delta=0 %.4f; "
             "delta=0 curves bit-identical to baseline: %s",
             sd_shaped, sd_base, identical ? "yes" : "no"));
}

// ---------------------------------------------------------------- determinism

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return files;
}

void determinism() {
  const std::vector<std::string> steps = {
      "ingest --synthetic --units 4 --seed 5 --out {d}",
      "train-forecaster --epochs 2 --d-model 16 --heads 2 --d-k 8 --d-v 8 --layers 1 --d-ff 16 --dropout 0.1 "
      "--dir {d} --seed 5",
      "eval --dir {d}",
      "calibrate-mdp --dir {d}",
      "solve-mdp --dir {d}",
      "train-agent dqn --steps 2000 --dir {d} --seed 5",
      "train-agent ppo --steps 2000 --dir {d} --seed 5",
      "train-agent sac --steps 2000 --dir {d} --seed 5",
      "rlhf --simulated --agent dqn --steps 2000 --dir {d} --seed 5",
      "export-curves --dir {d}",
  };
  const std::string fed =
      "federate --machines 2 --rounds 2 --local-epochs 1 --d-model 16 --heads 2 --d-k 8 --d-v 8 --layers 1 "
      "--d-ff 16 --dir {d} --seed 5";
  std::vector<std::map<std::string, std::string>> runs;
  bool ran = true;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path d = scratch("det" + std::to_string(rep));
    const fs::path f = d / "fed";
    fs::create_directories(f);
    auto sub = [](std::string s, const fs::path& p) {
      for (std::size_t i; (i = s.find("{d}")) != std::string::npos;) s.replace(i, 3, p.string());
      return s;
    };
    for (const auto& s : steps) ran &= run_cli(sub(s, d)) == 0;
    ran &= run_cli(sub(steps[0], f)) == 0;
    ran &= run_cli(sub(fed, f)) == 0;
    std::ofstream(d / "pipeline.json") << R"({"seed": 8, "data": {"synthetic": true, "units": 3},
      "forecaster": {"d_model": 8, "n_heads": 2, "d_k": 4, "d_v": 4, "n_layers": 1, "d_ff": 8, "epochs": 1},
      "agent": {"kind": "sac", "steps": 1000}})";
    ran &= run_cli("pipeline --config " + (d / "pipeline.json").string() + " --out " + (d / "report.json").string() +
                   " --dir " + d.string()) == 0;
    runs.push_back(snapshot(d));
    fs::remove_all(d);
  }
  std::vector<std::string> differ;
  for (const auto& [name, body] : runs[0]) {
    auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != body) differ.push_back(name);
  }
  if (runs[0].size() != runs[1].size()) differ.push_back("(file sets differ)");
  std::string list;
  for (const auto& n : differ) list += " " + n;
  report(ran && differ.empty(), "determinism",
         fmt("%zu artifact files from 12 commands compared byte-for-byte across two runs; commands ok: %s; "
             "differing:%s",
             runs[0].size(), ran ? "yes" : "no", differ.empty() ? " none" : list.c_str()));
}

}  // namespace

int main() {
  criterion("gradient correctness", gradient_correctness);
  criterion("attention normalization", attention_normalization);
  criterion("value iteration oracle", value_iteration_oracle);
  criterion("labeling law", labeling_law);
  criterion("federation identities", federation_identities);
  criterion("determinism", determinism);

  std::optional<Phase1> phase1;
  criterion("forecaster utility", [&] { phase1 = forecaster_utility(); });
  if (!phase1) {
    report(false, "calibrated MDP", "forecaster stage unavailable; agent and RLHF criteria not run");
    return 1;
  }
  const MdpSpec& spec = phase1->spec;
  const auto bundled = load_mdp(std::string(RULMDP_DATA_DIR) + "/calibrated.mdp.json");
  std::printf("info: calibrated MDP %s the bundled data/calibrated.mdp.json\n",
              mdp_to_json(bundled).dump() == mdp_to_json(spec).dump() ? "matches" : "differs from");
  agent_agreement(spec);
  criterion("RLHF stability", [&] { rlhf_stability(spec); });
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
