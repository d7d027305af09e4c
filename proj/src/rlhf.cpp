#include "rulmdp/rlhf.hpp"

#include <cmath>
#include <sstream>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/errors.hpp"

namespace rulmdp {

std::string to_string(FeedbackLabel l) {
  switch (l) {
    case FeedbackLabel::Positive: return "positive";
    case FeedbackLabel::Negative: return "negative";
    case FeedbackLabel::None: return "none";
  }
  return "none";
}

std::string to_string(FeedbackSource s) {
  switch (s) {
    case FeedbackSource::Human: return "human";
    case FeedbackSource::Oracle: return "oracle";
    case FeedbackSource::Timeout: return "timeout";
  }
  return "timeout";
}

FeedbackLabel feedback_label_from_string(const std::string& s) {
  if (s == "positive") return FeedbackLabel::Positive;
  if (s == "negative") return FeedbackLabel::Negative;
  if (s == "none") return FeedbackLabel::None;
  throw ValidationError("unknown feedback label '" + s + "'");
}

FeedbackSource feedback_source_from_string(const std::string& s) {
  if (s == "human") return FeedbackSource::Human;
  if (s == "oracle") return FeedbackSource::Oracle;
  if (s == "timeout") return FeedbackSource::Timeout;
  throw ValidationError("unknown feedback source '" + s + "'");
}

void FeedbackConfig::validate() const {
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw ValidationError("delta must be a non-negative number");
  if (!std::isfinite(r_positive) || !std::isfinite(r_negative)) throw ValidationError("feedback rewards must be finite");
  if (!(feedback_rate >= 0.0 && feedback_rate <= 1.0)) throw ValidationError("feedback_rate must be in [0, 1]");
  if (live_timeout.count() <= 0) throw ValidationError("live_timeout must be positive");
}

double human_reward(FeedbackLabel label, const FeedbackConfig& c) {
  switch (label) {
    case FeedbackLabel::Positive: return c.r_positive;
    case FeedbackLabel::Negative: return c.r_negative;
    case FeedbackLabel::None: return 0.0;
  }
  return 0.0;
}

double shape_reward(double base, FeedbackLabel label, const FeedbackConfig& c) {
  return base + c.delta * human_reward(label, c);
}

FeedbackLabel oracle_feedback(std::size_t state, std::size_t action, const std::vector<std::size_t>& pi) {
  if (state >= pi.size()) throw ValidationError("state outside the oracle policy");
  return action == pi[state] ? FeedbackLabel::Positive : FeedbackLabel::Negative;
}

FeedbackProvider oracle_provider(std::vector<std::size_t> pi) {
  return [pi = std::move(pi)](const FeedbackEvent& e) {
    return LabelResult{oracle_feedback(e.state, e.action, pi), FeedbackSource::Oracle, 0.0};
  };
}

FeedbackProvider replay_provider(const std::vector<FeedbackEvent>& log) {
  std::map<std::pair<std::size_t, std::size_t>, FeedbackEvent> by_step;
  for (const auto& e : log) by_step[{e.episode, e.step}] = e;
  return [by_step = std::move(by_step)](const FeedbackEvent& e) {
    auto it = by_step.find({e.episode, e.step});
    if (it == by_step.end())
      throw DataError("feedback log has no event for episode " + std::to_string(e.episode) + ", step " +
                      std::to_string(e.step));
    if (it->second.state != e.state || it->second.action != e.action)
      throw DataError("feedback log diverges at episode " + std::to_string(e.episode) + ", step " +
                      std::to_string(e.step));
    return LabelResult{it->second.label, it->second.source, it->second.latency_ms};
  };
}

RlhfResult train_rlhf(const MdpSpec& spec, const AgentConfig& agent, const FeedbackConfig& fb,
                      const FeedbackProvider& provider, const std::string& run_id,
                      const std::function<void(const FeedbackEvent&)>& on_event, const EpisodeHook& on_episode) {
  fb.validate();
  if (!provider) throw ValidationError("train_rlhf needs a feedback provider");
  const Rng select = Rng(agent.seed).split("feedback");
  RlhfResult result;
  std::uint64_t next_id = 0;
  auto hook = [&](const StepContext& ctx) {
    Rng r = select.split(ctx.global_step);
    if (!(r.uniform() < fb.feedback_rate)) return ctx.reward;
    FeedbackEvent e;
    e.event_id = next_id++;
    e.run_id = run_id;
    e.episode = ctx.episode;
    e.step = ctx.step;
    e.state = ctx.state;
    e.action = ctx.action;
    if (!spec.bin_centers.empty()) e.rul_estimate = spec.bin_centers[ctx.state];
    const LabelResult lr = provider(e);
    e.label = lr.label;
    e.source = lr.source;
    e.latency_ms = lr.latency_ms;
    result.log.push_back(e);
    if (on_event) on_event(e);
    return shape_reward(ctx.reward, e.label, fb);
  };
  result.agent = train_agent(spec, agent, hook, on_episode);
  return result;
}

std::string feedback_log_header() { return "event_id,episode,step,state,action,label,source,latency_ms\n"; }

std::string feedback_event_to_csv_row(const FeedbackEvent& e) {
  return std::to_string(e.event_id) + "," + std::to_string(e.episode) + "," + std::to_string(e.step) + "," +
         std::to_string(e.state) + "," + std::to_string(e.action) + "," + to_string(e.label) + "," +
         to_string(e.source) + "," + format_double(e.latency_ms, 6) + "\n";
}

std::string feedback_log_to_csv(const std::vector<FeedbackEvent>& log) {
  std::string out = feedback_log_header();
  for (const auto& e : log) out += feedback_event_to_csv_row(e);
  return out;
}

std::vector<FeedbackEvent> feedback_log_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<FeedbackEvent> out;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw ParseError(n, "feedback log rows need 8 fields");
    try {
      FeedbackEvent e;
      e.event_id = std::stoull(f[0]);
      e.episode = std::stoul(f[1]);
      e.step = std::stoul(f[2]);
      e.state = std::stoul(f[3]);
      e.action = std::stoul(f[4]);
      e.label = feedback_label_from_string(f[5]);
      e.source = feedback_source_from_string(f[6]);
      e.latency_ms = std::stod(f[7]);
      out.push_back(e);
    } catch (const std::logic_error&) {
      throw ParseError(n, "malformed feedback log row");
    } catch (const ValidationError& err) {
      throw ParseError(n, err.what());
    }
  }
  return out;
}

}  // namespace rulmdp
