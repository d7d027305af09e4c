#include "rulmdp/service.hpp"

#include <atomic>
#include <condition_variable>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/errors.hpp"
#include "rulmdp/feedback_queue.hpp"
#include "rulmdp/pipeline.hpp"

namespace rulmdp {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

const std::vector<std::string> kServiceKinds{"forecaster", "federation", "agent", "rlhf"};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  out << line;
  out.flush();
  if (!out) throw Error("cannot append to " + path.string());
}

void write_atomic(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, text);
  fs::rename(tmp, path);
}

struct Run {
  std::string id;
  std::string kind;
  std::string created_at;
  nlohmann::json config_doc;  // as submitted
  std::string idempotency_key;
  bool live = false;
  fs::path dir;

  mutable std::mutex mu;
  std::string status = "pending";
  std::string error;
  json result;
  std::vector<EpisodeRecord> curve;

  FeedbackQueue queue;
  std::atomic<bool> cancel{false};
  std::thread worker;

  json descriptor() const {
    json j;
    j["run_id"] = id;
    j["kind"] = kind;
    j["status"] = status;
    j["created_at"] = created_at;
    j["idempotency_key"] = idempotency_key.empty() ? json() : json(idempotency_key);
    j["config"] = config_doc;
    j["error"] = error.empty() ? json() : json(error);
    j["result"] = result;
    return j;
  }
};

json error_body(const std::string& message, const std::vector<FieldError>& fields = {}) {
  json j;
  j["error"] = message;
  if (!fields.empty()) {
    auto arr = json::array();
    for (const auto& f : fields) arr.push_back({{"field", f.field}, {"message", f.message}});
    j["fields"] = std::move(arr);
  }
  return j;
}

void send(httplib::Response& res, int code, const json& body) {
  res.status = code;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  httplib::Server server;
  int port = -1;

  std::mutex mu;
  std::condition_variable idle_cv;
  std::map<std::string, std::shared_ptr<Run>> runs;
  std::map<std::string, std::string> by_key;
  std::uint64_t next_id = 1;
  bool stopping = false;

  explicit Impl(ServiceConfig c) : config(std::move(c)) {
    fs::create_directories(config.runs_dir);
    reload();
    routes();
  }

  // --- persistence ---

  void persist(const Run& run) {
    std::string text;
    {
      std::lock_guard lock(run.mu);
      text = run.descriptor().dump(2) + "\n";
    }
    write_atomic(run.dir / "descriptor.json", text);
  }

  void reload() {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(config.runs_dir)) {
      if (e.is_directory() && fs::exists(e.path() / "descriptor.json")) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
      try {
        const auto d = nlohmann::json::parse(read_file(dir / "descriptor.json"));
        auto run = std::make_shared<Run>();
        run->id = d.at("run_id").get<std::string>();
        run->kind = d.at("kind").get<std::string>();
        run->created_at = d.at("created_at").get<std::string>();
        run->config_doc = d.at("config");
        if (d.at("idempotency_key").is_string()) run->idempotency_key = d["idempotency_key"].get<std::string>();
        run->status = d.at("status").get<std::string>();
        if (d.at("error").is_string()) run->error = d["error"].get<std::string>();
        run->result = d.at("result");
        run->dir = dir;
        if (fs::exists(dir / "curve.csv")) run->curve = curve_from_csv(read_file(dir / "curve.csv"));
        run->queue.close();
        if (run->status == "pending" || run->status == "running") {
          run->status = "failed";
          run->error = "interrupted by service restart";
          persist(*run);
        }
        if (!run->idempotency_key.empty()) by_key[run->idempotency_key] = run->id;
        const auto digits = run->id.find_first_of("0123456789");
        if (digits != std::string::npos) next_id = std::max<std::uint64_t>(next_id, std::stoull(run->id.substr(digits)) + 1);
        runs[run->id] = std::move(run);
      } catch (const std::exception& e) {
        std::cerr << "warning: skipping run directory " << dir << ": " << e.what() << "\n";
      }
    }
  }

  // --- run execution ---

  void set_status(Run& run, const std::string& status, const std::string& error = {}) {
    {
      std::lock_guard lock(run.mu);
      run.status = status;
      run.error = error;
    }
    persist(run);
  }

  void execute(Run& run, const RunConfig& cfg) {
    set_status(run, "running");
    json result;
    if (run.kind == "forecaster" || run.kind == "federation") {
      auto stage = run_forecast(cfg);
      save_checkpoint(run.dir / "model.ckpt.json", to_json(stage.model.config()), stage.model.params());
      write_file(run.dir / "eval_curve.csv", curve_to_csv(evaluate_predictions(stage.data.windows, stage.predictions).curve));
      if (!stage.rounds.empty()) write_file(run.dir / "rounds.csv", round_metrics_to_csv(stage.rounds));
      result["rmse"] = stage.rmse;
      result["persistence_rmse"] = stage.persistence_rmse;
      result["windows"] = stage.data.windows.size();
    } else {
      const MdpSpec spec = resolve_mdp(cfg);
      write_file(run.dir / "mdp.spec.json", mdp_to_json(spec).dump(2) + "\n");
      const auto optimal = value_iteration(spec).policy;
      auto on_episode = [&](const EpisodeRecord& e) {
        append_line(run.dir / "curve.csv", std::to_string(e.episode) + "," + format_double(e.total_reward) + "," +
                                              format_double(e.epsilon_or_entropy) + "\n");
        {
          std::lock_guard lock(run.mu);
          run.curve.push_back(e);
        }
        if (run.cancel.load()) throw Cancelled();
      };
      AgentResult agent;
      if (run.kind == "agent") {
        agent = train_agent(spec, cfg.agent, {}, on_episode);
      } else {
        auto provider = run.live ? queue_provider(run.queue, cfg.feedback.live_timeout) : oracle_provider(optimal);
        auto on_event = [&](const FeedbackEvent& e) {
          append_line(run.dir / "feedback.csv", feedback_event_to_csv_row(e));
        };
        agent = train_rlhf(spec, cfg.agent, cfg.feedback, provider, run.id, on_event, on_episode).agent;
      }
      write_file(run.dir / "policy.csv", policy_to_csv(agent.policy));
      const auto greedy = agent.greedy();
      std::size_t agree = 0;
      for (std::size_t s = 0; s < greedy.size(); ++s) agree += greedy[s] == optimal[s];
      std::vector<std::string> names;
      for (auto a : greedy) names.push_back(spec.action_names.at(a));
      result["policy"] = names;
      result["agreement"] = agree;
      result["episodes"] = agent.curve.size();
    }
    {
      std::lock_guard lock(run.mu);
      run.result = std::move(result);
    }
    set_status(run, "done");
  }

  void worker(std::shared_ptr<Run> run, RunConfig cfg) {
    try {
      execute(*run, cfg);
    } catch (const Cancelled& e) {
      set_status(*run, "failed", e.what());
    } catch (const std::exception& e) {
      set_status(*run, "failed", e.what());
    }
    run->queue.close();
    { std::lock_guard lock(mu); }  // no lost wakeup against wait_idle
    idle_cv.notify_all();
  }

  // --- handlers ---

  std::shared_ptr<Run> find(const std::string& id) {
    std::lock_guard lock(mu);
    auto it = runs.find(id);
    return it == runs.end() ? nullptr : it->second;
  }

  void post_run(const httplib::Request& req, httplib::Response& res) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      return send(res, 400, error_body("body is not valid JSON", {{"$", e.what()}}));
    }
    std::string key = req.get_header_value("Idempotency-Key");
    if (key.empty() && doc.is_object() && doc.contains("idempotency_key") && doc["idempotency_key"].is_string()) {
      key = doc["idempotency_key"].get<std::string>();
    }
    RunConfig cfg;
    try {
      cfg = parse_run_config(doc, kServiceKinds);
    } catch (const ConfigError& e) {
      return send(res, 400, error_body("invalid run config", e.errors()));
    }
    if (!doc.contains("idempotency_key") && !key.empty()) doc["idempotency_key"] = key;

    std::shared_ptr<Run> run;
    {
      std::lock_guard lock(mu);
      if (!key.empty()) {
        auto it = by_key.find(key);
        if (it != by_key.end()) {
          const auto& existing = runs.at(it->second);
          std::lock_guard rl(existing->mu);
          return send(res, 200, {{"run_id", existing->id}, {"status", existing->status}});
        }
      }
      if (stopping) return send(res, 503, error_body("service is shutting down"));
      char id[32];
      std::snprintf(id, sizeof id, "run-%06llu", static_cast<unsigned long long>(next_id++));
      run = std::make_shared<Run>();
      run->id = id;
      run->kind = cfg.kind;
      run->created_at = utc_now();
      run->config_doc = doc;
      run->idempotency_key = key;
      run->live = cfg.kind == "rlhf" && cfg.feedback.mode == FeedbackMode::Live;
      run->dir = config.runs_dir / run->id;
      fs::create_directories(run->dir);
      if (run->kind == "agent" || run->kind == "rlhf") {
        write_file(run->dir / "curve.csv", "episode,total_reward,epsilon_or_entropy\n");
      }
      if (run->kind == "rlhf") write_file(run->dir / "feedback.csv", feedback_log_header());
      persist(*run);
      runs[run->id] = run;
      if (!key.empty()) by_key[key] = run->id;
      run->worker = std::thread(&Impl::worker, this, run, std::move(cfg));
    }
    send(res, 201, {{"run_id", run->id}, {"status", "pending"}});
  }

  json summary(const Run& run) {
    std::lock_guard lock(run.mu);
    return {{"run_id", run.id}, {"kind", run.kind}, {"status", run.status}, {"created_at", run.created_at}};
  }

  json status_doc(const Run& run) {
    std::lock_guard lock(run.mu);
    json j = run.descriptor();
    j.erase("idempotency_key");
    json m;
    m["episodes"] = run.curve.size();
    m["last_total_reward"] = run.curve.empty() ? json() : json(run.curve.back().total_reward);
    m["last_epsilon_or_entropy"] = run.curve.empty() ? json() : json(run.curve.back().epsilon_or_entropy);
    j["metrics"] = std::move(m);
    return j;
  }

  void routes() {
    server.set_default_headers({{"X-Api-Version", kApiVersion}});
    server.Post("/runs", [this](const httplib::Request& req, httplib::Response& res) { post_run(req, res); });
    server.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
      std::vector<std::shared_ptr<Run>> all;
      {
        std::lock_guard lock(mu);
        for (const auto& [id, r] : runs) all.push_back(r);
      }
      auto arr = json::array();
      for (const auto& r : all) arr.push_back(summary(*r));
      send(res, 200, arr);
    });
    server.Get(R"(/runs/([^/]+)/status)", [this](const httplib::Request& req, httplib::Response& res) {
      auto run = find(req.matches[1]);
      if (!run) return send(res, 404, error_body("unknown run '" + std::string(req.matches[1]) + "'"));
      send(res, 200, status_doc(*run));
    });
    server.Get(R"(/runs/([^/]+)/curve)", [this](const httplib::Request& req, httplib::Response& res) {
      auto run = find(req.matches[1]);
      if (!run) return send(res, 404, error_body("unknown run '" + std::string(req.matches[1]) + "'"));
      std::vector<EpisodeRecord> curve;
      {
        std::lock_guard lock(run->mu);
        curve = run->curve;
      }
      const auto format = req.has_param("format") ? req.get_param_value("format") : "json";
      if (format == "csv") {
        std::string csv = "episode,total_reward\n";
        for (const auto& e : curve) csv += std::to_string(e.episode) + "," + format_double(e.total_reward) + "\n";
        res.status = 200;
        return res.set_content(csv, "text/csv");
      }
      if (format != "json") return send(res, 400, error_body("bad format", {{"format", "must be json or csv"}}));
      auto arr = json::array();
      for (const auto& e : curve) arr.push_back({{"episode", e.episode}, {"total_reward", e.total_reward}});
      send(res, 200, arr);
    });
    server.Get(R"(/runs/([^/]+)/pending)", [this](const httplib::Request& req, httplib::Response& res) {
      auto run = find(req.matches[1]);
      if (!run) return send(res, 404, error_body("unknown run '" + std::string(req.matches[1]) + "'"));
      if (run->kind != "rlhf") return send(res, 409, error_body("run " + run->id + " is not an rlhf run"));
      if (!run->live) return send(res, 409, error_body("run " + run->id + " uses simulated feedback"));
      auto timeout = config.long_poll;
      if (req.has_param("timeout_ms")) {
        try {
          const long long ms = std::stoll(req.get_param_value("timeout_ms"));
          if (ms < 0) throw std::invalid_argument("negative");
          timeout = std::min(timeout, std::chrono::milliseconds(ms));
        } catch (const std::exception&) {
          return send(res, 400, error_body("bad query", {{"timeout_ms", "must be a non-negative integer"}}));
        }
      }
      auto event = run->queue.wait_pending(timeout);
      if (!event) {
        res.status = 204;
        return;
      }
      const auto& names = maintenance_action_names();
      json j;
      j["event_id"] = event->event_id;
      j["run_id"] = event->run_id;
      j["episode"] = event->episode;
      j["step"] = event->step;
      j["state"] = event->state;
      j["action"] = event->action;
      j["action_name"] = event->action < names.size() ? names[event->action] : std::to_string(event->action);
      j["rul_estimate"] = event->rul_estimate;
      send(res, 200, j);
    });
    server.Post(R"(/runs/([^/]+)/feedback)", [this](const httplib::Request& req, httplib::Response& res) {
      auto run = find(req.matches[1]);
      if (!run) return send(res, 404, error_body("unknown run '" + std::string(req.matches[1]) + "'"));
      if (run->kind != "rlhf" || !run->live) {
        return send(res, 409, error_body("run " + run->id + " does not take live feedback"));
      }
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception& e) {
        return send(res, 400, error_body("body is not valid JSON", {{"$", e.what()}}));
      }
      std::vector<FieldError> errs;
      if (!doc.is_object()) errs.push_back({"$", "must be an object"});
      std::uint64_t event_id = 0;
      FeedbackLabel label = FeedbackLabel::None;
      if (errs.empty()) {
        if (!doc.contains("event_id") || !doc["event_id"].is_number_unsigned()) {
          errs.push_back({"event_id", "must be a non-negative integer"});
        } else {
          event_id = doc["event_id"].get<std::uint64_t>();
        }
        const auto l = doc.contains("label") && doc["label"].is_string() ? doc["label"].get<std::string>() : "";
        if (l == "positive") {
          label = FeedbackLabel::Positive;
        } else if (l == "negative") {
          label = FeedbackLabel::Negative;
        } else {
          errs.push_back({"label", "must be positive or negative"});
        }
        for (const auto& [k, v] : doc.items()) {
          if (k != "event_id" && k != "label") errs.push_back({k, "unknown key"});
        }
      }
      if (!errs.empty()) return send(res, 400, error_body("invalid feedback", errs));
      switch (run->queue.submit(event_id, label)) {
        case FeedbackQueue::Submit::Accepted:
          return send(res, 200, {{"event_id", event_id}, {"label", to_string(label)}, {"accepted", true}});
        case FeedbackQueue::Submit::UnknownEvent:
          return send(res, 404, error_body("unknown event " + std::to_string(event_id)));
        case FeedbackQueue::Submit::AlreadyLabeled:
          return send(res, 409, error_body("event " + std::to_string(event_id) + " is already labeled"));
      }
    });
  }

  void shutdown() {
    std::vector<std::shared_ptr<Run>> all;
    {
      std::lock_guard lock(mu);
      stopping = true;
      for (const auto& [id, r] : runs) all.push_back(r);
    }
    server.stop();
    for (auto& r : all) {
      r->cancel = true;
      r->queue.close();
    }
    for (auto& r : all) {
      if (r->worker.joinable()) r->worker.join();
    }
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

int Service::bind() {
  auto& s = impl_->server;
  if (impl_->config.port == 0) {
    impl_->port = s.bind_to_any_port(impl_->config.host);
  } else {
    impl_->port = s.bind_to_port(impl_->config.host, impl_->config.port) ? impl_->config.port : -1;
  }
  if (impl_->port < 0) {
    throw Error("cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  }
  return impl_->port;
}

void Service::serve() {
  if (impl_->port < 0) throw Error("serve() before bind()");
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (impl_) impl_->shutdown();
}

bool Service::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(impl_->mu);
  return impl_->idle_cv.wait_for(lock, timeout, [&] {
    for (const auto& [id, r] : impl_->runs) {
      std::lock_guard rl(r->mu);
      if (r->status == "pending" || r->status == "running") return false;
    }
    return true;
  });
}

}  // namespace rulmdp
