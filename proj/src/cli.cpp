#include "rulmdp/cli.hpp"

#include <pthread.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/errors.hpp"
#include "rulmdp/feedback_queue.hpp"
#include "rulmdp/pipeline.hpp"
#include "rulmdp/service.hpp"

namespace rulmdp {

namespace {

namespace fs = std::filesystem;

// Working-directory artifacts.
constexpr const char* kWindows = "windows.csv";
constexpr const char* kStats = "stats.json";
constexpr const char* kModel = "model.ckpt.json";
constexpr const char* kTrainLoss = "train_loss.csv";
constexpr const char* kFeaturizer = "featurizer.json";
constexpr const char* kSpec = "mdp.spec.json";
constexpr const char* kPolicy = "policy.csv";
constexpr const char* kCurve = "curve.csv";
constexpr const char* kFeedback = "feedback.csv";
constexpr const char* kEvalCurve = "eval_curve.csv";
constexpr const char* kRounds = "rounds.csv";
constexpr const char* kReport = "report.json";

fs::path artifact(const std::string& dir, const std::string& name, const char* producer) {
  fs::path p = fs::path(dir) / name;
  if (!fs::exists(p)) throw DataError("missing " + p.string() + " (produced by `rulmdp " + producer + "`)");
  return p;
}

void put(const std::string& dir, const char* name, const std::string& text) {
  fs::create_directories(dir);
  write_file(fs::path(dir) / name, text);
}

std::string csv_row(const std::vector<double>& v, int digits) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i], digits);
  return s;
}

std::vector<double> parse_triplet(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError(std::string(flag) + ": '" + item + "' is not a number");
    }
    if (out.back() < 0.0) throw ValidationError(std::string(flag) + ": values must be >= 0");
  }
  if (out.size() != kMaintenanceActions) throw ValidationError(std::string(flag) + ": expected three values a0,a1,a2");
  return out;
}

struct ModelFlags {
  TransformerConfig model;
  ForecasterTrainConfig train;
  std::string loss = "mse";
};

void add_model_flags(CLI::App* c, ModelFlags& f) {
  c->add_option("--batch-size", f.train.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
  c->add_option("--lr", f.train.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  c->add_option("--loss", f.loss, "Loss function")->check(CLI::IsMember({"mse", "smape"}));
  c->add_option("--d-model", f.model.d_model, "Model width (= heads * d-k)")->check(CLI::PositiveNumber);
  c->add_option("--heads", f.model.n_heads, "Attention heads")->check(CLI::PositiveNumber);
  c->add_option("--d-k", f.model.d_k, "Query/key width per head")->check(CLI::PositiveNumber);
  c->add_option("--d-v", f.model.d_v, "Value width per head")->check(CLI::PositiveNumber);
  c->add_option("--layers", f.model.n_layers, "Encoder (and decoder) layers")->check(CLI::PositiveNumber);
  c->add_option("--d-ff", f.model.d_ff, "Feed-forward width")->check(CLI::PositiveNumber);
  c->add_option("--dropout", f.model.dropout, "Dropout rate")->check(CLI::Range(0.0, 0.99));
  c->add_flag("--decoder", f.model.use_decoder, "Add the decoder stack");
}

struct Ingested {
  std::vector<RulWindow> windows;
  NormStats stats;
  double rul_cap = kDefaultRulCap;
};

Ingested load_ingested(const std::string& dir) {
  Ingested in;
  const auto doc = nlohmann::json::parse(read_file(artifact(dir, kStats, "ingest")));
  in.stats = norm_stats_from_json(doc);
  in.rul_cap = doc.value("rul_cap", kDefaultRulCap);
  in.windows = windows_from_csv(read_file(artifact(dir, kWindows, "ingest")));
  if (in.windows.empty()) throw DataError(std::string(kWindows) + " holds no windows");
  if (in.windows.front().inputs.cols() != in.stats.feature_dim()) {
    throw DataError("windows.csv and stats.json disagree on the feature count");
  }
  return in;
}

TransformerConfig model_config(const ModelFlags& f, const Ingested& in) {
  auto c = f.model;
  c.feature_dim = in.stats.feature_dim();
  c.window_len = in.windows.front().inputs.rows();
  c.rul_cap = in.rul_cap;
  c.validate();
  return c;
}

TransformerModel load_model(const std::string& dir) {
  const auto ck = load_checkpoint(artifact(dir, kModel, "train-forecaster"));
  return TransformerModel(transformer_config_from_json(ck.config), ck.params);
}

MdpSpec load_spec(const std::string& dir, const std::string& path) {
  return load_mdp((path.empty() ? artifact(dir, kSpec, "calibrate-mdp") : fs::path(path)).string());
}

void print_solution(const MdpSpec& spec, const Solution& sol) {
  std::printf("%-6s %-18s %s\n", "state", "V*", "pi*");
  for (std::size_t s = 0; s < spec.n_states; ++s) {
    std::printf("%-6zu %-18s %s\n", s, format_double(sol.values[s], 12).c_str(),
                spec.action_names.at(sol.policy[s]).c_str());
  }
  std::vector<std::string> names;
  for (auto a : sol.policy) names.push_back(spec.action_names.at(a));
  std::string pi;
  for (std::size_t i = 0; i < names.size(); ++i) pi += (i ? ", " : "") + names[i];
  std::printf("V=(%s)\npi=(%s)\niterations=%zu\n", csv_row(sol.values, 10).c_str(), pi.c_str(), sol.iterations);
}

struct AgentFlags {
  std::size_t steps = 50'000;
  std::string warm_start;
  std::size_t warm_start_episodes = 0;
};

void add_agent_flags(CLI::App* c, AgentFlags& f) {
  c->add_option("--steps", f.steps, "Environment step budget");
  c->add_option("--warm-start", f.warm_start, "policy.csv whose actions are followed in the first episodes");
  c->add_option("--warm-start-episodes", f.warm_start_episodes, "Episodes that follow the warm-start table");
}

AgentConfig agent_config(const std::string& kind, const AgentFlags& f, std::uint64_t seed, const MdpSpec& spec) {
  AgentConfig a;
  a.kind = agent_kind_from_string(kind);
  a.budget_steps = f.steps;
  a.seed = seed;
  if (!f.warm_start.empty()) {
    a.warm_start = policy_actions_from_csv(read_file(f.warm_start));
    if (a.warm_start.size() != spec.n_states) throw DataError("warm-start table does not cover every state");
    a.warm_start_episodes = f.warm_start_episodes;
  }
  return a;
}

void write_agent_outputs(const std::string& dir, const AgentResult& r, const MdpSpec& spec) {
  put(dir, kCurve, curve_to_csv(r.curve));
  put(dir, kPolicy, policy_to_csv(r.policy));
  const auto greedy = r.greedy();
  const auto optimal = value_iteration(spec).policy;
  std::size_t agree = 0;
  for (std::size_t s = 0; s < greedy.size(); ++s) agree += greedy[s] == optimal[s];
  std::printf("episodes=%zu agreement=%zu/%zu greedy_return=%s optimal_return=%s\n", r.curve.size(), agree,
              greedy.size(), format_double(episode_return(spec, greedy), 10).c_str(),
              format_double(episode_return(spec, optimal), 10).c_str());
}

// Blocks SIGINT/SIGTERM in every thread and stops `service` when one arrives.
int serve_until_signal(Service& service) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    service.stop();
  });
  service.serve();
  // serve() also returns when the socket fails; release the waiter then.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Predictive maintenance: RUL forecasting, maintenance MDP and RL agents with human feedback"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", "rulmdp 0.1.0");
  std::string dir = ".";
  std::uint64_t seed = 42;

  auto add_dir = [&](CLI::App* c) { c->add_option("--dir", dir, "Working directory holding the artifacts"); };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "Random seed"); };

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse a run-to-failure file into labeled windows and normalizer stats");
  std::string data_file;
  double cap = kDefaultRulCap;
  std::size_t window = kDefaultWindowLen;
  std::string out_dir = ".";
  bool synthetic = false;
  SyntheticFleetConfig fleet;
  ingest->add_option("data_file", data_file, "26-column whitespace-separated file (unit, cycle, 3 settings, 21 sensors)");
  ingest->add_option("--cap", cap, "RUL cap");
  ingest->add_option("--window", window, "Window length");
  ingest->add_option("--out", out_dir, "Output directory");
  ingest->add_flag("--synthetic", synthetic, "Generate a seeded synthetic fleet instead of reading a file");
  ingest->add_option("--units", fleet.units, "Synthetic fleet size");
  ingest->add_option("--noise", fleet.noise_frac, "Synthetic sensor noise as a fraction of the cap");
  ingest->add_option("--design-seed", fleet.design_seed, "Seed of the synthetic sensor design");
  add_seed(ingest);

  // train-forecaster / federate
  ModelFlags mf;
  auto* tf = app.add_subcommand("train-forecaster", "Train the attention RUL forecaster on windows.csv");
  tf->add_option("--epochs", mf.train.epochs, "Training epochs");
  add_model_flags(tf, mf);
  add_dir(tf);
  add_seed(tf);

  FederationConfig fed;
  auto* fd = app.add_subcommand("federate", "Federated training over machines holding disjoint units");
  fd->add_option("--machines", fed.machines, "Number of machines")->check(CLI::PositiveNumber);
  fd->add_option("--rounds", fed.rounds, "Communication rounds")->check(CLI::PositiveNumber);
  fd->add_option("--local-epochs", fed.local_epochs, "Local epochs per round");
  add_model_flags(fd, mf);
  add_dir(fd);
  add_seed(fd);

  // eval
  auto* ev = app.add_subcommand("eval", "Score model.ckpt.json on windows.csv against the persistence baseline");
  std::string eval_windows;
  ev->add_option("--windows", eval_windows, "Windows file to score (default: windows.csv in --dir)");
  add_dir(ev);

  // calibrate-mdp
  MdpBuildConfig mb;
  std::string cost_text = "0,1,5", downtime_text = "0,0.5,3";
  double discount = 0.99;
  std::size_t episode_len = 200;
  auto* cm = app.add_subcommand("calibrate-mdp", "Discretize predicted RUL into 10 states and estimate the MDP");
  cm->add_option("--interval", mb.calibration.interval, "Cycles between decisions")->check(CLI::PositiveNumber);
  cm->add_option("--restore", mb.calibration.restore, "Cycles of life a partial maintenance restores");
  cm->add_option("--alpha", mb.weights.alpha, "Weight of the RUL gain");
  cm->add_option("--beta", mb.weights.beta, "Weight of the action cost");
  cm->add_option("--gamma", mb.weights.gamma, "Weight of the downtime");
  cm->add_option("--cost", cost_text, "Action costs a0,a1,a2");
  cm->add_option("--downtime", downtime_text, "Action downtimes a0,a1,a2");
  cm->add_option("--smoothing", mb.smoothing, "Additive smoothing of transition counts");
  cm->add_option("--discount", discount, "Discount factor")->check(CLI::Range(0.0, 0.999999));
  cm->add_option("--episode-len", episode_len, "Steps per episode")->check(CLI::PositiveNumber);
  add_dir(cm);

  // solve-mdp
  std::string spec_path;
  double tol = 1e-10;
  auto* sm = app.add_subcommand("solve-mdp", "Value iteration: print the V* and pi* tables");
  sm->add_option("--spec", spec_path, "MDP spec (default: mdp.spec.json in --dir)");
  sm->add_option("--tol", tol, "Sup-norm tolerance on V*")->check(CLI::PositiveNumber);
  add_dir(sm);

  // train-agent
  std::string agent_kind;
  AgentFlags af;
  auto* ta = app.add_subcommand("train-agent", "Train DQN, PPO or SAC on the MDP; writes curve.csv and policy.csv");
  ta->add_option("kind", agent_kind, "Agent")->required()->check(CLI::IsMember({"dqn", "ppo", "sac"}));
  ta->add_option("--spec", spec_path, "MDP spec (default: mdp.spec.json in --dir)");
  add_agent_flags(ta, af);
  add_dir(ta);
  add_seed(ta);

  // rlhf
  bool simulated = false, serve = false;
  std::string replay;
  std::string rl_agent = "dqn";
  FeedbackConfig fb;
  ServiceConfig sc;
  long long live_timeout_ms = fb.live_timeout.count();
  long long long_poll_ms = sc.long_poll.count();
  std::string runs_dir = sc.runs_dir.string();
  auto* rl = app.add_subcommand("rlhf", "Agent training with reward shaped by expert feedback");
  auto* mode = rl->add_option_group("mode");
  mode->add_flag("--simulated", simulated, "Oracle feedback from pi*");
  mode->add_flag("--serve", serve, "Launch the HTTP service for live feedback runs");
  mode->add_option("--replay", replay, "Re-run with the labels recorded in a feedback log");
  mode->require_option(1);
  rl->add_option("--agent", rl_agent, "Agent")->check(CLI::IsMember({"dqn", "ppo", "sac"}));
  rl->add_option("--spec", spec_path, "MDP spec (default: mdp.spec.json in --dir)");
  rl->add_option("--delta", fb.delta, "Weight of the human reward");
  rl->add_option("--r-positive", fb.r_positive, "Human reward of a positive label");
  rl->add_option("--r-negative", fb.r_negative, "Human reward of a negative label");
  rl->add_option("--feedback-rate", fb.feedback_rate, "Fraction of steps that request feedback")
      ->check(CLI::Range(0.0, 1.0));
  rl->add_option("--live-timeout-ms", live_timeout_ms, "Live label timeout");
  rl->add_option("--host", sc.host, "Service bind address");
  rl->add_option("--port", sc.port, "Service port (0 picks a free one)");
  rl->add_option("--runs-dir", runs_dir, "Service run log directory");
  rl->add_option("--long-poll-ms", long_poll_ms, "Longest wait of GET /runs/{id}/pending");
  add_agent_flags(rl, af);
  add_dir(rl);
  add_seed(rl);

  // export-curves
  std::string export_dir = "curves";
  auto* ex = app.add_subcommand("export-curves", "Write plot-ready CSVs from the artifacts present in --dir");
  ex->add_option("--out", export_dir, "Output directory, relative to --dir");
  add_dir(ex);

  // pipeline
  std::string config_path, report_path;
  bool print_defaults = false;
  auto* pl = app.add_subcommand("pipeline", "Full run: forecast, calibrate, solve or train, recommend");
  pl->add_option("--config", config_path, "Run config document (JSON); omitted fields take their defaults");
  pl->add_option("--out", report_path, "Report path (default: report.json in --dir)");
  pl->add_flag("--print-defaults", print_defaults, "Print the defaults table and exit");
  add_dir(pl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (ingest->parsed()) {
      if (!(cap > 0.0)) throw ValidationError("--cap must be > 0");
      if (window == 0) throw ValidationError("--window must be >= 1");
      if (synthetic == !data_file.empty()) throw ValidationError("give either a data file or --synthetic");
      std::vector<UnitSeries> units;
      if (synthetic) {
        fleet.seed = seed;
        fleet.rul_cap = cap;
        units = synthetic_fleet(fleet);
      } else {
        units = load_cmapss(data_file);
      }
      auto ds = prepare_dataset(std::move(units), window, cap);
      auto stats = norm_stats_to_json(ds.stats);
      stats["rul_cap"] = cap;
      stats["window_len"] = window;
      put(out_dir, kStats, stats.dump(2) + "\n");
      put(out_dir, kWindows, windows_to_csv(ds.windows));
      std::printf("units=%zu windows=%zu features=%zu dropped=%zu\n", ds.units.size(), ds.windows.size(),
                  ds.stats.feature_dim(), ds.stats.dropped.size());
    } else if (tf->parsed() || fd->parsed()) {
      const auto in = load_ingested(dir);
      const auto cfg = model_config(mf, in);
      mf.train.loss = loss_kind_from_string(mf.loss);
      mf.train.seed = seed;
      if (tf->parsed()) {
        TransformerModel model(cfg, seed);
        const auto hist = train_forecaster(model, in.windows, mf.train);
        save_checkpoint(fs::path(dir) / kModel, to_json(cfg), model.params());
        std::string loss = "epoch,loss\n";
        for (std::size_t e = 0; e < hist.epoch_loss.size(); ++e) {
          loss += std::to_string(e + 1) + "," + format_double(hist.epoch_loss[e]) + "\n";
        }
        put(dir, kTrainLoss, loss);
        std::printf("rmse=%s\n", format_double(evaluate(model, in.windows).rmse, 10).c_str());
      } else {
        fed.batch_size = mf.train.batch_size;
        fed.lr = mf.train.lr;
        fed.loss = mf.train.loss;
        fed.seed = seed;
        auto result = run_federation(cfg, fed, split_by_unit(in.windows, fed.machines), in.windows);
        save_checkpoint(fs::path(dir) / kModel, to_json(cfg), result.central.params());
        put(dir, kRounds, round_metrics_to_csv(result.metrics));
        std::printf("rmse=%s\n", format_double(evaluate(result.central, in.windows).rmse, 10).c_str());
      }
    } else if (ev->parsed()) {
      const auto model = load_model(dir);
      const auto in = load_ingested(dir);
      const auto windows = eval_windows.empty() ? in.windows : windows_from_csv(read_file(eval_windows));
      const auto r = evaluate(model, windows);
      const auto base = evaluate_predictions(windows, persistence_baseline(windows, model.config().rul_cap));
      put(dir, kEvalCurve, curve_to_csv(r.curve));
      std::printf("rmse=%s mae=%s persistence_rmse=%s\n", format_double(r.rmse, 10).c_str(),
                  format_double(r.mae, 10).c_str(), format_double(base.rmse, 10).c_str());
    } else if (cm->parsed()) {
      mb.costs.cost = parse_triplet(cost_text, "--cost");
      mb.costs.downtime = parse_triplet(downtime_text, "--downtime");
      const auto model = load_model(dir);
      const auto in = load_ingested(dir);
      const auto per_unit = predictions_by_unit(in.windows, predict_all(model, in.windows));
      auto cal = calibrate_from_predictions(per_unit, mb);
      cal.spec.discount = discount;
      cal.spec.episode_len = episode_len;
      cal.spec.validate();
      for (const auto& w : cal.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      put(dir, kFeaturizer, featurizer_to_json(cal.featurizer).dump(2) + "\n");
      put(dir, kSpec, mdp_to_json(cal.spec).dump(2) + "\n");
      std::printf("states=%zu actions=%zu bin_centers=(%s)\n", cal.spec.n_states, cal.spec.n_actions,
                  csv_row(cal.spec.bin_centers, 6).c_str());
    } else if (sm->parsed()) {
      const auto spec = load_spec(dir, spec_path);
      print_solution(spec, value_iteration(spec, tol));
    } else if (ta->parsed()) {
      const auto spec = load_spec(dir, spec_path);
      const auto result = train_agent(spec, agent_config(agent_kind, af, seed, spec));
      write_agent_outputs(dir, result, spec);
    } else if (rl->parsed()) {
      fb.live_timeout = std::chrono::milliseconds(live_timeout_ms);
      if (serve) {
        sc.runs_dir = runs_dir;
        sc.long_poll = std::chrono::milliseconds(long_poll_ms);
        Service service(sc);
        const int port = service.bind();
        std::printf("listening on http://%s:%d (runs in %s)\n", sc.host.c_str(), port, sc.runs_dir.c_str());
        std::fflush(stdout);
        return serve_until_signal(service);
      }
      fb.mode = FeedbackMode::Simulated;
      fb.validate();
      const auto spec = load_spec(dir, spec_path);
      const auto agent = agent_config(rl_agent, af, seed, spec);
      FeedbackProvider provider;
      if (simulated) {
        provider = oracle_provider(value_iteration(spec).policy);
      } else {
        provider = replay_provider(feedback_log_from_csv(read_file(replay)));
      }
      const auto result = train_rlhf(spec, agent, fb, provider);
      write_agent_outputs(dir, result.agent, spec);
      put(dir, kFeedback, feedback_log_to_csv(result.log));
    } else if (ex->parsed()) {
      const fs::path out = fs::path(dir) / export_dir;
      std::size_t written = 0;
      if (fs::exists(fs::path(dir) / kCurve)) {
        std::string csv = "episode,total_reward\n";
        for (const auto& e : curve_from_csv(read_file(fs::path(dir) / kCurve))) {
          csv += std::to_string(e.episode) + "," + format_double(e.total_reward) + "\n";
        }
        put(out.string(), "rewards.csv", csv);
        ++written;
      }
      for (const char* name : {kEvalCurve, kRounds, kTrainLoss}) {
        if (fs::exists(fs::path(dir) / name)) {
          put(out.string(), name, read_file(fs::path(dir) / name));
          ++written;
        }
      }
      if (written == 0) {
        throw DataError("nothing to export in " + dir + ": expected curve.csv, eval_curve.csv, rounds.csv or " +
                        "train_loss.csv");
      }
      std::printf("exported=%zu dir=%s\n", written, out.c_str());
    } else if (pl->parsed()) {
      if (print_defaults) {
        std::printf("%s\n", run_config_defaults().dump(2).c_str());
        return 0;
      }
      nlohmann::json doc = {{"kind", "pipeline"}};
      if (!config_path.empty()) {
        try {
          doc = nlohmann::json::parse(read_file(config_path));
        } catch (const nlohmann::json::parse_error& e) {
          throw DataError(config_path + ": " + e.what());
        }
        if (doc.is_object() && !doc.contains("kind")) doc["kind"] = "pipeline";
      }
      const auto cfg = parse_run_config(doc, {"pipeline"});
      const auto report = run_pipeline(cfg);
      const auto text = report_to_json(report).dump(2) + "\n";
      if (report_path.empty()) {
        put(cfg.output_dir.empty() ? dir : cfg.output_dir, kReport, text);
      } else {
        write_file(report_path, text);
      }
      std::fputs(text.c_str(), stdout);
    }
    return 0;
  } catch (const ConfigError& e) {
    for (const auto& f : e.errors()) std::fprintf(stderr, "error: %s: %s\n", f.field.c_str(), f.message.c_str());
    return 1;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}

}  // namespace rulmdp
