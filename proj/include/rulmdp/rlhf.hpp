#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rulmdp/agents.hpp"

namespace rulmdp {

enum class FeedbackLabel { Positive, Negative, None };
enum class FeedbackSource { Human, Oracle, Timeout };
enum class FeedbackMode { Simulated, Live };

std::string to_string(FeedbackLabel l);
std::string to_string(FeedbackSource s);
FeedbackLabel feedback_label_from_string(const std::string& s);
FeedbackSource feedback_source_from_string(const std::string& s);

struct FeedbackConfig {
  double r_positive = 1.0;
  double r_negative = -1.0;
  double delta = 0.5;
  FeedbackMode mode = FeedbackMode::Simulated;
  std::chrono::milliseconds live_timeout{30'000};
  double feedback_rate = 1.0;  // fraction of steps on which feedback is requested

  void validate() const;
};

struct FeedbackEvent {
  std::uint64_t event_id = 0;
  std::string run_id;
  std::size_t episode = 0;
  std::size_t step = 0;
  std::size_t state = 0;
  std::size_t action = 0;
  double rul_estimate = 0.0;  // bin center of `state`, when the spec has one
  FeedbackLabel label = FeedbackLabel::None;
  FeedbackSource source = FeedbackSource::Timeout;
  double latency_ms = 0.0;
};

double human_reward(FeedbackLabel label, const FeedbackConfig& config);
// base + delta * human_reward(label)
double shape_reward(double base, FeedbackLabel label, const FeedbackConfig& config);
// Positive iff action == optimal_policy[state].
FeedbackLabel oracle_feedback(std::size_t state, std::size_t action, const std::vector<std::size_t>& optimal_policy);

struct LabelResult {
  FeedbackLabel label = FeedbackLabel::None;
  FeedbackSource source = FeedbackSource::Timeout;
  double latency_ms = 0.0;
};

// Produces a label for a pending event (oracle, live queue, or a replayed log).
using FeedbackProvider = std::function<LabelResult(const FeedbackEvent&)>;

FeedbackProvider oracle_provider(std::vector<std::size_t> optimal_policy);
// Returns the label recorded for (episode, step); throws DataError when the
// log has no such event or its state/action disagree.
FeedbackProvider replay_provider(const std::vector<FeedbackEvent>& log);

struct RlhfResult {
  AgentResult agent;
  std::vector<FeedbackEvent> log;
};

// train_agent with rewards shaped on the steps selected by feedback_rate. The
// selection uses its own random stream, so delta = 0 reproduces train_agent.
// `on_event` (optional) sees every completed event in order.
RlhfResult train_rlhf(const MdpSpec& spec, const AgentConfig& agent, const FeedbackConfig& feedback,
                      const FeedbackProvider& provider, const std::string& run_id = "local",
                      const std::function<void(const FeedbackEvent&)>& on_event = {},
                      const EpisodeHook& on_episode = {});

// `event_id,episode,step,state,action,label,source,latency_ms`
std::string feedback_log_to_csv(const std::vector<FeedbackEvent>& log);
std::string feedback_log_header();
std::string feedback_event_to_csv_row(const FeedbackEvent& e);
std::vector<FeedbackEvent> feedback_log_from_csv(const std::string& text);

}  // namespace rulmdp
