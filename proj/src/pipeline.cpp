#include "rulmdp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/errors.hpp"
#include "rulmdp/rng.hpp"

namespace rulmdp {

namespace {

std::string join_errors(const std::vector<FieldError>& errors) {
  std::string s = "invalid run config:";
  for (const auto& e : errors) s += " " + e.field + ": " + e.message + ";";
  if (!errors.empty()) s.pop_back();
  return s;
}

// Reads one JSON object, recording a FieldError per bad or unknown key.
class Reader {
 public:
  Reader(const nlohmann::json* obj, std::string path, std::vector<FieldError>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {}

  bool has(const char* key) const { return obj_ && obj_->contains(key); }

  void number(const char* key, double& out, double lo, double hi, bool lo_open = false) {
    const auto* v = take(key);
    if (!v) return;
    if (!v->is_number()) return fail(key, "must be a number");
    const double x = v->get<double>();
    if (!std::isfinite(x) || x < lo || x > hi || (lo_open && x == lo)) {
      return fail(key, "must be in " + std::string(lo_open ? "(" : "[") + fmt(lo) + ", " + fmt(hi) + "]");
    }
    out = x;
  }

  template <class Int>
  void integer(const char* key, Int& out, std::uint64_t lo, std::uint64_t hi = UINT64_MAX) {
    const auto* v = take(key);
    if (!v) return;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
      return fail(key, "must be a non-negative integer");
    }
    const auto x = v->get<std::uint64_t>();
    if (x < lo || x > hi) return fail(key, "must be >= " + std::to_string(lo));
    out = static_cast<Int>(x);
  }

  void boolean(const char* key, bool& out) {
    const auto* v = take(key);
    if (!v) return;
    if (!v->is_boolean()) return fail(key, "must be true or false");
    out = v->get<bool>();
  }

  void string(const char* key, std::string& out, const std::vector<std::string>& allowed = {}) {
    const auto* v = take(key);
    if (!v) return;
    if (!v->is_string()) return fail(key, "must be a string");
    auto s = v->get<std::string>();
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : "|") + a;
      return fail(key, "must be one of " + list + ", got '" + s + "'");
    }
    out = std::move(s);
  }

  void numbers(const char* key, std::vector<double>& out, std::size_t size, double lo) {
    const auto* v = take(key);
    if (!v) return;
    if (!v->is_array() || (size && v->size() != size)) {
      return fail(key, "must be an array of " + std::to_string(size) + " numbers");
    }
    std::vector<double> xs;
    for (const auto& e : *v) {
      if (!e.is_number() || e.get<double>() < lo) return fail(key, "entries must be numbers >= " + fmt(lo));
      xs.push_back(e.get<double>());
    }
    out = std::move(xs);
  }

  void sizes(const char* key, std::vector<std::size_t>& out, bool allow_empty) {
    const auto* v = take(key);
    if (!v) return;
    if (!v->is_array() || (!allow_empty && v->empty())) return fail(key, "must be an array of positive integers");
    std::vector<std::size_t> xs;
    for (const auto& e : *v) {
      if (!e.is_number_unsigned() || (!allow_empty && e.get<std::size_t>() == 0)) {
        return fail(key, "must be an array of positive integers");
      }
      xs.push_back(e.get<std::size_t>());
    }
    out = std::move(xs);
  }

  const nlohmann::json* raw(const char* key) { return take(key); }

  Reader object(const char* key) {
    const auto* v = take(key);
    if (v && !v->is_object()) {
      fail(key, "must be an object");
      v = nullptr;
    }
    return Reader(v, field(key), errors_);
  }

  void fail(const char* key, const std::string& message) { errors_.push_back({field(key), message}); }

  // Reports keys never read.
  void finish() {
    if (!obj_) return;
    for (const auto& [k, v] : obj_->items()) {
      if (!seen_.count(k)) errors_.push_back({field(k.c_str()), "unknown key"});
    }
  }

 private:
  const nlohmann::json* take(const char* key) {
    seen_.insert(key);
    if (!obj_) return nullptr;
    auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }
  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  static std::string fmt(double x) {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    nlohmann::json j = x;
    return j.dump();
  }

  const nlohmann::json* obj_;
  std::string path_;
  std::vector<FieldError>& errors_;
  std::set<std::string> seen_;
};

const std::vector<std::string> kKinds{"forecaster", "federation", "agent", "rlhf", "pipeline"};
constexpr double kInf = std::numeric_limits<double>::infinity();

void read_data(Reader r, DataConfig& d) {
  r.string("windows", d.windows_path);
  r.string("cmapss", d.cmapss_path);
  r.string("eval", d.eval_path);
  r.boolean("synthetic", d.synthetic);
  r.integer("units", d.synth.units, 1);
  r.integer("min_life", d.synth.min_life, 2, UINT32_MAX);
  r.integer("max_life", d.synth.max_life, 2, UINT32_MAX);
  r.number("noise_frac", d.synth.noise_frac, 0.0, kInf);
  r.integer("design_seed", d.synth.design_seed, 0);
  r.integer("eval_units", d.eval_units, 0);
  r.number("rul_cap", d.rul_cap, 0.0, kInf, true);
  r.integer("window_len", d.window_len, 1);
  if (d.synth.max_life < d.synth.min_life) r.fail("max_life", "must be >= min_life");
  if (!d.synthetic && d.windows_path.empty() && d.cmapss_path.empty()) d.synthetic = true;
  d.synth.rul_cap = d.rul_cap;
  r.finish();
}

void read_forecaster(Reader r, TransformerConfig& m, ForecasterTrainConfig& t) {
  r.integer("d_model", m.d_model, 1);
  r.integer("n_heads", m.n_heads, 1);
  r.integer("d_k", m.d_k, 1);
  r.integer("d_v", m.d_v, 1);
  r.integer("n_layers", m.n_layers, 1);
  r.integer("d_ff", m.d_ff, 1);
  r.number("dropout", m.dropout, 0.0, 1.0);
  if (m.dropout >= 1.0) r.fail("dropout", "must be < 1");
  r.boolean("use_decoder", m.use_decoder);
  r.integer("epochs", t.epochs, 0);
  r.integer("batch_size", t.batch_size, 1);
  r.number("lr", t.lr, 0.0, kInf, true);
  std::string loss = t.loss == LossKind::Mse ? "mse" : "smape";
  r.string("loss", loss, {"mse", "smape"});
  t.loss = loss_kind_from_string(loss);
  if (m.d_model != m.n_heads * m.d_k) r.fail("d_model", "must equal n_heads * d_k");
  r.finish();
}

void read_federation(Reader r, bool& enabled, FederationConfig& f) {
  r.boolean("enabled", enabled);
  r.integer("machines", f.machines, 1);
  r.integer("rounds", f.rounds, 1);
  r.integer("local_epochs", f.local_epochs, 0);
  r.finish();
}

void read_mdp(Reader r, MdpBuildConfig& m, FeedbackConfig& fb) {
  r.string("path", m.path);
  if (const auto* spec = r.raw("spec")) {
    try {
      mdp_from_json(*spec).validate();
      m.inline_spec = *spec;
    } catch (const Error& e) {
      r.fail("spec", e.what());
    }
  }
  r.number("alpha", m.weights.alpha, 0.0, kInf);
  r.number("beta", m.weights.beta, 0.0, kInf);
  r.number("gamma", m.weights.gamma, 0.0, kInf);
  r.number("delta", fb.delta, 0.0, kInf);
  r.numbers("cost", m.costs.cost, kMaintenanceActions, 0.0);
  r.numbers("downtime", m.costs.downtime, kMaintenanceActions, 0.0);
  r.integer("interval", m.calibration.interval, 1);
  r.integer("restore", m.calibration.restore, 1);
  r.number("smoothing", m.smoothing, 0.0, kInf);
  r.number("threshold", m.threshold, 0.0, kInf);
  r.finish();
}

void read_agent(Reader r, AgentConfig& a) {
  std::string kind = to_string(a.kind);
  r.string("kind", kind, {"dqn", "ppo", "sac"});
  a.kind = agent_kind_from_string(kind);
  r.integer("steps", a.budget_steps, 0);
  r.sizes("warm_start", a.warm_start, true);
  r.integer("warm_start_episodes", a.warm_start_episodes, 0);
  {
    Reader d = r.object("dqn");
    d.number("lr", a.dqn.lr, 0.0, kInf, true);
    d.number("gamma", a.dqn.gamma, 0.0, 1.0);
    d.integer("buffer", a.dqn.buffer, 1);
    d.integer("batch", a.dqn.batch, 1);
    d.integer("target_sync", a.dqn.target_sync, 1);
    d.number("eps_start", a.dqn.eps_start, 0.0, 1.0);
    d.number("eps_end", a.dqn.eps_end, 0.0, 1.0);
    d.sizes("hidden", a.dqn.hidden, false);
    d.integer("train_freq", a.dqn.train_freq, 1);
    d.finish();
  }
  {
    Reader p = r.object("ppo");
    p.number("lr", a.ppo.lr, 0.0, kInf, true);
    p.number("gamma", a.ppo.gamma, 0.0, 1.0);
    p.number("clip", a.ppo.clip, 0.0, kInf, true);
    p.number("vf_coef", a.ppo.vf_coef, 0.0, kInf);
    p.number("entropy_coef", a.ppo.entropy_coef, 0.0, kInf);
    p.integer("batch", a.ppo.batch, 1);
    p.integer("epochs", a.ppo.epochs, 1);
    p.number("gae_lambda", a.ppo.gae_lambda, 0.0, 1.0);
    p.integer("rollout", a.ppo.rollout, 1);
    p.sizes("hidden", a.ppo.hidden, false);
    p.finish();
  }
  {
    Reader s = r.object("sac");
    s.number("lr", a.sac.lr, 0.0, kInf, true);
    s.number("gamma", a.sac.gamma, 0.0, 1.0);
    s.number("temperature", a.sac.temperature, 0.0, kInf);
    s.boolean("auto_temperature", a.sac.auto_temperature);
    s.integer("buffer", a.sac.buffer, 1);
    s.integer("batch", a.sac.batch, 1);
    s.number("tau", a.sac.tau, 0.0, 1.0);
    s.sizes("hidden", a.sac.hidden, false);
    s.finish();
  }
  if (!a.warm_start.empty() && a.kind == AgentKind::Ppo) r.fail("warm_start", "only dqn and sac accept a warm start");
  r.finish();
}

void read_feedback(Reader r, bool& enabled, FeedbackConfig& f) {
  r.boolean("enabled", enabled);
  std::string mode = f.mode == FeedbackMode::Live ? "live" : "simulated";
  r.string("mode", mode, {"simulated", "live"});
  f.mode = mode == "live" ? FeedbackMode::Live : FeedbackMode::Simulated;
  r.number("r_positive", f.r_positive, -kInf, kInf);
  r.number("r_negative", f.r_negative, -kInf, kInf);
  r.number("feedback_rate", f.feedback_rate, 0.0, 1.0);
  std::uint64_t timeout = static_cast<std::uint64_t>(f.live_timeout.count());
  r.integer("live_timeout_ms", timeout, 1);
  f.live_timeout = std::chrono::milliseconds(timeout);
  r.finish();
}

}  // namespace

ConfigError::ConfigError(std::vector<FieldError> errors)
    : ValidationError(join_errors(errors)), errors_(std::move(errors)) {}

RunConfig parse_run_config(const nlohmann::json& doc, const std::vector<std::string>& allowed_kinds) {
  std::vector<FieldError> errors;
  if (!doc.is_object()) throw ConfigError(std::vector<FieldError>{{"$", "run config must be a JSON object"}});
  RunConfig c;
  Reader r(&doc, "", errors);
  const auto& kinds = allowed_kinds.empty() ? kKinds : allowed_kinds;
  if (!doc.contains("kind")) {
    r.fail("kind", "is required");
  } else {
    r.string("kind", c.kind, kinds);
  }
  r.integer("seed", c.seed, 0);
  r.string("output_dir", c.output_dir);
  r.string("idempotency_key", c.idempotency_key);
  read_data(r.object("data"), c.data);
  read_forecaster(r.object("forecaster"), c.model, c.train);
  read_federation(r.object("federation"), c.federate, c.federation);
  read_mdp(r.object("mdp"), c.mdp, c.feedback);
  read_agent(r.object("agent"), c.agent);
  read_feedback(r.object("feedback"), c.use_feedback, c.feedback);
  r.finish();

  c.data.synth.seed = c.seed;
  c.model.window_len = c.data.window_len;
  c.model.rul_cap = c.data.rul_cap;
  c.train.seed = c.seed;
  c.federation.seed = c.seed;
  c.federation.batch_size = c.train.batch_size;
  c.federation.lr = c.train.lr;
  c.federation.loss = c.train.loss;
  c.agent.seed = c.seed;
  if (c.kind == "rlhf") c.use_feedback = true;
  if (c.kind == "federation") c.federate = true;
  if (c.use_feedback && c.kind == "pipeline" && c.feedback.mode == FeedbackMode::Live) {
    errors.push_back({"feedback.mode", "live feedback needs the service (kind rlhf)"});
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return c;
}

nlohmann::ordered_json run_config_defaults() {
  const RunConfig c;
  nlohmann::ordered_json j;
  j["kind"] = "pipeline";
  j["seed"] = c.seed;
  j["output_dir"] = "";
  j["idempotency_key"] = "";
  const auto& d = c.data;
  j["data"] = {{"windows", ""},
               {"cmapss", ""},
               {"eval", ""},
               {"synthetic", true},
               {"units", d.synth.units},
               {"min_life", d.synth.min_life},
               {"max_life", d.synth.max_life},
               {"noise_frac", d.synth.noise_frac},
               {"design_seed", d.synth.design_seed},
               {"eval_units", d.eval_units},
               {"rul_cap", d.rul_cap},
               {"window_len", d.window_len}};
  j["forecaster"] = {{"d_model", c.model.d_model},       {"n_heads", c.model.n_heads},
                     {"d_k", c.model.d_k},               {"d_v", c.model.d_v},
                     {"n_layers", c.model.n_layers},     {"d_ff", c.model.d_ff},
                     {"dropout", c.model.dropout},       {"use_decoder", c.model.use_decoder},
                     {"epochs", c.train.epochs},         {"batch_size", c.train.batch_size},
                     {"lr", c.train.lr},                 {"loss", "mse"}};
  j["federation"] = {{"enabled", c.federate},
                     {"machines", c.federation.machines},
                     {"rounds", c.federation.rounds},
                     {"local_epochs", c.federation.local_epochs}};
  j["mdp"] = {{"path", ""},
              {"alpha", c.mdp.weights.alpha},
              {"beta", c.mdp.weights.beta},
              {"gamma", c.mdp.weights.gamma},
              {"delta", c.feedback.delta},
              {"cost", c.mdp.costs.cost},
              {"downtime", c.mdp.costs.downtime},
              {"interval", c.mdp.calibration.interval},
              {"restore", c.mdp.calibration.restore},
              {"smoothing", c.mdp.smoothing},
              {"threshold", c.mdp.threshold}};
  const auto& a = c.agent;
  j["agent"] = {
      {"kind", to_string(a.kind)},
      {"steps", a.budget_steps},
      {"warm_start", nlohmann::json::array()},
      {"warm_start_episodes", a.warm_start_episodes},
      {"dqn",
       {{"lr", a.dqn.lr}, {"gamma", a.dqn.gamma}, {"buffer", a.dqn.buffer}, {"batch", a.dqn.batch},
        {"target_sync", a.dqn.target_sync}, {"eps_start", a.dqn.eps_start}, {"eps_end", a.dqn.eps_end},
        {"hidden", a.dqn.hidden}, {"train_freq", a.dqn.train_freq}}},
      {"ppo",
       {{"lr", a.ppo.lr}, {"gamma", a.ppo.gamma}, {"clip", a.ppo.clip}, {"vf_coef", a.ppo.vf_coef},
        {"entropy_coef", a.ppo.entropy_coef}, {"batch", a.ppo.batch}, {"epochs", a.ppo.epochs},
        {"gae_lambda", a.ppo.gae_lambda}, {"rollout", a.ppo.rollout}, {"hidden", a.ppo.hidden}}},
      {"sac",
       {{"lr", a.sac.lr}, {"gamma", a.sac.gamma}, {"temperature", a.sac.temperature},
        {"auto_temperature", a.sac.auto_temperature}, {"buffer", a.sac.buffer}, {"batch", a.sac.batch},
        {"tau", a.sac.tau}, {"hidden", a.sac.hidden}}}};
  j["feedback"] = {{"enabled", c.use_feedback},
                   {"mode", "simulated"},
                   {"r_positive", c.feedback.r_positive},
                   {"r_negative", c.feedback.r_negative},
                   {"feedback_rate", c.feedback.feedback_rate},
                   {"live_timeout_ms", c.feedback.live_timeout.count()}};
  return j;
}

namespace {

UnitRecommendation recommend_from_predictions(const std::vector<double>& preds, const StateFeaturizer& featurizer,
                                              const MdpSpec& spec, const std::vector<std::size_t>& policy,
                                              double threshold) {
  if (preds.empty()) throw DataError("unit has no windows");
  UnitRecommendation r;
  r.predicted_rul = preds.back();
  r.state = featurizer.discretize_sequence(preds).back();
  r.action = policy.at(r.state);
  r.action_name = spec.action_names.at(r.action);
  r.rule = rule_based_recommend(r.predicted_rul, threshold);
  return r;
}

// Prefixes a stage label onto errors thrown inside `fn`.
template <class F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const DataError& e) {
    throw DataError(std::string(name) + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(name) + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(std::string(name) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string(name) + ": " + e.what());
  } catch (const Cancelled&) {
    throw;
  } catch (const Error& e) {
    throw Error(std::string(name) + ": " + e.what());
  }
}

}  // namespace

std::vector<UnitSeries> load_units(const DataConfig& data) {
  if (!data.cmapss_path.empty()) return load_cmapss(data.cmapss_path);
  if (data.synthetic) return synthetic_fleet(data.synth);
  throw ValidationError("data: no unit source (set data.cmapss or data.synthetic)");
}

Dataset prepare_dataset(std::vector<UnitSeries> units, std::size_t window_len, double rul_cap) {
  Dataset d;
  d.stats = fit_normalizer(units);
  d.windows = make_windows(units, d.stats, window_len, rul_cap);
  d.units = std::move(units);
  return d;
}

std::vector<std::vector<double>> predictions_by_unit(const std::vector<RulWindow>& windows,
                                                     const std::vector<double>& predictions) {
  if (windows.size() != predictions.size()) throw ShapeError("one prediction per window expected");
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (i == 0 || windows[i].unit_id != windows[i - 1].unit_id) out.emplace_back();
    out.back().push_back(predictions[i]);
  }
  return out;
}

Calibrated calibrate_from_predictions(const std::vector<std::vector<double>>& per_unit, const MdpBuildConfig& config) {
  Calibrated c;
  c.featurizer = fit_featurizer(per_unit);
  const auto data = build_calibration(c.featurizer, per_unit, config.calibration);
  c.spec = calibrate_mdp(data, config.costs, config.weights, config.smoothing, &c.warnings);
  return c;
}

TrainHistory train_forecaster(TransformerModel& model, const std::vector<RulWindow>& windows,
                              const ForecasterTrainConfig& config) {
  auto tc = config;
  tc.seed = training_seed(config.seed, 0, 0);
  return train(model, windows, tc);
}

std::vector<std::pair<UnitSeries, double>> synthetic_partial_histories(const SyntheticFleetConfig& fleet,
                                                                      std::size_t count, std::uint64_t seed) {
  if (count == 0) return {};
  auto cfg = fleet;
  cfg.units = count;
  cfg.seed = Rng(seed).split("eval-fleet").next_u64();
  auto units = synthetic_fleet(cfg);
  Rng cut = Rng(seed).split("eval-cut");
  std::vector<std::pair<UnitSeries, double>> out;
  for (auto& u : units) {
    // Cut anywhere from mid-life to the last cycle so the set spans healthy to
    // near-failure units.
    const auto life = u.failure_cycle;
    const auto lo = life / 2;
    const auto at = lo + static_cast<std::uint32_t>(cut.uniform_int(life - lo)) + 1;
    const double true_rul = piecewise_rul(life, at, cfg.rul_cap);
    u.records.resize(at);
    u.failure_cycle = at;
    out.emplace_back(std::move(u), true_rul);
  }
  return out;
}


UnitRecommendation recommend(const TransformerModel& model, const NormStats& stats, const StateFeaturizer& featurizer,
                             const MdpSpec& spec, const std::vector<std::size_t>& policy, const UnitSeries& history,
                             double threshold) {
  const auto windows =
      make_windows(history, stats, model.config().window_len, model.config().rul_cap);
  auto r = recommend_from_predictions(predict_all(model, windows), featurizer, spec, policy, threshold);
  r.unit_id = history.unit_id;
  r.cycle = history.records.empty() ? 0 : history.records.back().cycle;
  return r;
}

ForecastStage run_forecast(const RunConfig& config) {
  Dataset data = stage("ingest", [&] {
    if (!config.data.windows_path.empty()) {
      Dataset d;
      d.windows = windows_from_csv(read_file(config.data.windows_path));
      if (d.windows.empty()) throw DataError("no windows in " + config.data.windows_path);
      return d;
    }
    return prepare_dataset(load_units(config.data), config.data.window_len, config.data.rul_cap);
  });
  auto model_cfg = config.model;
  model_cfg.feature_dim = data.windows.front().inputs.cols();
  model_cfg.window_len = data.windows.front().inputs.rows();
  model_cfg.rul_cap = config.data.rul_cap;
  std::vector<RoundMetric> rounds;
  TransformerModel model = stage("forecast", [&] {
    if (config.federate) {
      auto result = run_federation(model_cfg, config.federation, split_by_unit(data.windows, config.federation.machines),
                                   data.windows);
      rounds = std::move(result.metrics);
      return std::move(result.central);
    }
    TransformerModel m(model_cfg, config.seed);
    train_forecaster(m, data.windows, config.train);
    return m;
  });
  auto predictions = predict_all(model, data.windows);
  const double rmse = evaluate_predictions(data.windows, predictions).rmse;
  const double base =
      evaluate_predictions(data.windows, persistence_baseline(data.windows, config.data.rul_cap)).rmse;
  return ForecastStage{std::move(data), std::move(model), std::move(predictions), std::move(rounds), rmse, base};
}

namespace {

bool has_explicit_mdp(const RunConfig& c) { return c.mdp.inline_spec || !c.mdp.path.empty(); }

MdpSpec explicit_mdp(const RunConfig& c) {
  return stage("mdp", [&] {
    auto spec = c.mdp.inline_spec ? mdp_from_json(*c.mdp.inline_spec) : load_mdp(c.mdp.path);
    spec.validate();
    return spec;
  });
}

}  // namespace

MdpSpec resolve_mdp(const RunConfig& config, const ForecastStage* forecast) {
  if (has_explicit_mdp(config)) return explicit_mdp(config);
  std::optional<ForecastStage> own;
  if (!forecast) forecast = &own.emplace(run_forecast(config));
  const auto per_unit = predictions_by_unit(forecast->data.windows, forecast->predictions);
  return stage("calibrate", [&] { return calibrate_from_predictions(per_unit, config.mdp).spec; });
}

PipelineReport run_pipeline(const RunConfig& config) {
  PipelineReport report;
  // Phase 1: RUL prediction.
  ForecastStage fs = run_forecast(config);
  const Dataset& data = fs.data;
  const TransformerModel& model = fs.model;
  const auto& predictions = fs.predictions;
  report.forecaster_rmse = fs.rmse;
  report.persistence_rmse = fs.persistence_rmse;

  // Phase 2: state abstraction, MDP and policy.
  const auto per_unit = predictions_by_unit(data.windows, predictions);
  Calibrated cal = stage("calibrate", [&] { return calibrate_from_predictions(per_unit, config.mdp); });
  MdpSpec spec = cal.spec;
  if (has_explicit_mdp(config)) {
    spec = explicit_mdp(config);
    if (spec.n_states != kHealthStates) throw ValidationError("mdp: pipeline needs a 10-state spec");
  }
  const auto sol = stage("solve", [&] { return value_iteration(spec); });
  report.action_names = spec.action_names;
  report.optimal_policy = sol.policy;
  report.optimal_values = sol.values;
  report.policy = sol.policy;
  report.policy_source = "optimal";
  // With a zero step budget the recommendation comes straight from pi*.
  if (config.agent.budget_steps > 0) {
    report.policy = stage("agent", [&] {
      if (config.use_feedback) {
        return train_rlhf(spec, config.agent, config.feedback, oracle_provider(sol.policy)).agent.greedy();
      }
      return train_agent(spec, config.agent).greedy();
    });
    report.policy_source = to_string(config.agent.kind);
  }

  // Recommendations for the current state of each unit.
  stage("recommend", [&] {
    if (!config.data.eval_path.empty()) {
      if (data.units.empty()) throw ValidationError("data.eval needs raw training units for normalization");
      for (const auto& u : load_cmapss(config.data.eval_path)) {
        report.units.push_back(
            recommend(model, data.stats, cal.featurizer, spec, report.policy, u, config.mdp.threshold));
      }
    } else if (config.data.synthetic && config.data.windows_path.empty() && config.data.cmapss_path.empty()) {
      for (auto& [u, rul] :
           synthetic_partial_histories(config.data.synth, config.data.eval_units, config.seed)) {
        auto r = recommend(model, data.stats, cal.featurizer, spec, report.policy, u, config.mdp.threshold);
        r.true_rul = rul;
        report.units.push_back(std::move(r));
      }
    } else {
      std::size_t i = 0;
      for (const auto& preds : per_unit) {
        auto r = recommend_from_predictions(preds, cal.featurizer, spec, report.policy, config.mdp.threshold);
        i += preds.size();
        r.unit_id = data.windows[i - 1].unit_id;
        r.cycle = data.windows[i - 1].end_cycle;
        r.true_rul = data.windows[i - 1].target_rul;
        report.units.push_back(std::move(r));
      }
    }
    return 0;
  });
  return report;
}

nlohmann::ordered_json report_to_json(const PipelineReport& report) {
  nlohmann::ordered_json j;
  j["forecaster_rmse"] = report.forecaster_rmse;
  j["persistence_rmse"] = report.persistence_rmse;
  j["policy_source"] = report.policy_source;
  auto names = [&](const std::vector<std::size_t>& p) {
    std::vector<std::string> out;
    for (auto a : p) out.push_back(report.action_names.at(a));
    return out;
  };
  j["optimal_policy"] = names(report.optimal_policy);
  j["optimal_values"] = report.optimal_values;
  j["policy"] = names(report.policy);
  auto units = nlohmann::ordered_json::array();
  for (const auto& u : report.units) {
    nlohmann::ordered_json e;
    e["unit_id"] = u.unit_id;
    e["cycle"] = u.cycle;
    e["predicted_rul"] = u.predicted_rul;
    e["true_rul"] = u.true_rul ? nlohmann::ordered_json(*u.true_rul) : nlohmann::ordered_json();
    e["state"] = u.state;
    e["action"] = u.action_name;
    e["rule"] = to_string(u.rule);
    units.push_back(std::move(e));
  }
  j["units"] = std::move(units);
  return j;
}

}  // namespace rulmdp
