#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rulmdp/errors.hpp"
#include "rulmdp/federation.hpp"
#include "rulmdp/forecaster.hpp"
#include "rulmdp/mdp.hpp"
#include "rulmdp/rlhf.hpp"
#include "rulmdp/synthetic.hpp"

namespace rulmdp {

struct FieldError {
  std::string field;  // dotted path, e.g. "agent.kind"
  std::string message;
};

class ConfigError : public ValidationError {
 public:
  explicit ConfigError(std::vector<FieldError> errors);
  const std::vector<FieldError>& errors() const noexcept { return errors_; }

 private:
  std::vector<FieldError> errors_;
};

struct DataConfig {
  std::string windows_path;  // pre-built windows (ingest output)
  std::string cmapss_path;   // raw 26-column training file
  std::string eval_path;     // raw file of partial histories to recommend for
  bool synthetic = false;
  SyntheticFleetConfig synth;
  std::size_t eval_units = 5;  // synthetic partial histories for the pipeline report
  double rul_cap = kDefaultRulCap;
  std::size_t window_len = kDefaultWindowLen;
};

struct MdpBuildConfig {
  std::string path;                        // load instead of calibrating
  std::optional<nlohmann::json> inline_spec;
  RewardWeights weights;
  MdpCosts costs;
  CalibrationOptions calibration{5, 50};
  double smoothing = 1.0;
  double threshold = 10.0;  // rule-based recommender
};

// Parsed run document shared by the service (POST /runs) and `pipeline`.
struct RunConfig {
  std::string kind;  // forecaster | federation | agent | rlhf | pipeline
  std::uint64_t seed = 42;
  DataConfig data;
  TransformerConfig model;
  ForecasterTrainConfig train;
  bool federate = false;
  FederationConfig federation;
  MdpBuildConfig mdp;
  AgentConfig agent;
  bool use_feedback = false;
  FeedbackConfig feedback;
  std::string output_dir;
  std::string idempotency_key;
};

// Validates every field and rejects unknown keys; collects all problems into
// one ConfigError. `allowed_kinds` empty means any known kind.
RunConfig parse_run_config(const nlohmann::json& doc, const std::vector<std::string>& allowed_kinds = {});
// Every field with its default value.
nlohmann::ordered_json run_config_defaults();

// Raw units from the configured source (synthetic fleet or C-MAPSS file).
std::vector<UnitSeries> load_units(const DataConfig& data);

struct Dataset {
  std::vector<UnitSeries> units;
  NormStats stats;
  std::vector<RulWindow> windows;
};
Dataset prepare_dataset(std::vector<UnitSeries> units, std::size_t window_len, double rul_cap);

// Predictions regrouped per unit in window order (windows sorted by unit, then cycle).
std::vector<std::vector<double>> predictions_by_unit(const std::vector<RulWindow>& windows,
                                                     const std::vector<double>& predictions);

struct Calibrated {
  StateFeaturizer featurizer;
  MdpSpec spec;
  std::vector<std::string> warnings;
};
Calibrated calibrate_from_predictions(const std::vector<std::vector<double>>& per_unit, const MdpBuildConfig& config);

// Trains the forecaster as train-forecaster does: init with `seed`, train with
// training_seed(seed, 0, 0).
TrainHistory train_forecaster(TransformerModel& model, const std::vector<RulWindow>& windows,
                              const ForecasterTrainConfig& config);

// Phase 1 as configured: data, trained (or federated) forecaster and its
// predictions on the training windows.
struct ForecastStage {
  Dataset data;
  TransformerModel model;
  std::vector<double> predictions;
  std::vector<RoundMetric> rounds;  // federation only
  double rmse = 0.0;
  double persistence_rmse = 0.0;
};
ForecastStage run_forecast(const RunConfig& config);

// The MDP a run works on: mdp.spec or mdp.path when given, else calibrated
// from `forecast` (computed on demand when null).
MdpSpec resolve_mdp(const RunConfig& config, const ForecastStage* forecast = nullptr);

struct UnitRecommendation {
  std::uint32_t unit_id = 0;
  std::uint32_t cycle = 0;
  double predicted_rul = 0.0;
  std::optional<double> true_rul;
  std::size_t state = 0;
  std::size_t action = 0;
  std::string action_name;
  RuleRecommendation rule = RuleRecommendation::PeriodicInspection;
};

// Phase 2 for one unit history: predict along the history, discretize the
// latest step and look up the policy.
UnitRecommendation recommend(const TransformerModel& model, const NormStats& stats, const StateFeaturizer& featurizer,
                             const MdpSpec& spec, const std::vector<std::size_t>& policy, const UnitSeries& history,
                             double threshold);

struct PipelineReport {
  double forecaster_rmse = 0.0;
  double persistence_rmse = 0.0;
  std::string policy_source;  // optimal | dqn | ppo | sac (+rlhf)
  std::vector<std::string> action_names;
  std::vector<std::size_t> optimal_policy;
  std::vector<double> optimal_values;
  std::vector<std::size_t> policy;
  std::vector<UnitRecommendation> units;
};

PipelineReport run_pipeline(const RunConfig& config);
nlohmann::ordered_json report_to_json(const PipelineReport& report);

// Synthetic partial histories: units of a fresh fleet cut at a random cycle.
// Returns (history, true RUL at the cut) pairs.
std::vector<std::pair<UnitSeries, double>> synthetic_partial_histories(const SyntheticFleetConfig& fleet,
                                                                      std::size_t count, std::uint64_t seed);

}  // namespace rulmdp
