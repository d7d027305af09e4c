#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rulmdp/featurizer.hpp"
#include "rulmdp/rng.hpp"

namespace rulmdp {

enum class MaintenanceAction : std::size_t { NoAction = 0, PartialMaintenance = 1, CompleteOverhaul = 2 };
inline constexpr std::size_t kMaintenanceActions = 3;
const std::vector<std::string>& maintenance_action_names();

struct RewardWeights {
  double alpha = 1.0;  // RUL gain
  double beta = 1.0;   // cost
  double gamma = 1.0;  // downtime
};

// Finite MDP. The maintenance case is 10 x 3, but every routine accepts any size.
struct MdpSpec {
  std::size_t n_states = kHealthStates;
  std::size_t n_actions = kMaintenanceActions;
  std::vector<std::string> action_names;
  std::vector<double> P;            // [s][a][s'] flattened s-major
  std::vector<double> cost;         // [a]
  std::vector<double> downtime;     // [a]
  std::vector<double> rul_gain;     // [s][a] expected gain
  std::vector<double> bin_centers;  // [s]; empty when rul_gain is given directly
  std::vector<double> initial;      // reset distribution over states
  RewardWeights weights;
  double discount = 0.99;
  std::size_t episode_len = 200;

  double p(std::size_t s, std::size_t a, std::size_t s2) const { return P[(s * n_actions + a) * n_states + s2]; }
  const double* row(std::size_t s, std::size_t a) const { return P.data() + (s * n_actions + a) * n_states; }
  double gain(std::size_t s, std::size_t a) const { return rul_gain[s * n_actions + a]; }

  // Throws ValidationError on bad sizes, rows that are not distributions,
  // negative costs or discount outside [0, 1).
  void validate() const;
};

nlohmann::ordered_json mdp_to_json(const MdpSpec& spec);
MdpSpec mdp_from_json(const nlohmann::json& j);
MdpSpec load_mdp(const std::string& path);

// alpha * gain - beta * cost[a] - gamma * downtime[a]. The gain is
// bin_center(s') - bin_center(s) when bin centers exist, else rul_gain[s][a].
double reward(const MdpSpec& spec, std::size_t s, std::size_t a, std::size_t s2);
// Sum over s' of P(s'|s,a) reward(s,a,s').
double expected_reward(const MdpSpec& spec, std::size_t s, std::size_t a);

struct StepResult {
  std::size_t next_state;
  double reward;
};
StepResult step(const MdpSpec& spec, std::size_t s, std::size_t a, Rng& rng);

struct Solution {
  std::vector<double> values;
  std::vector<std::size_t> policy;
  std::size_t iterations = 0;
};

// Bellman optimality iteration from V = 0; greedy policy with lowest-index ties.
Solution value_iteration(const MdpSpec& spec, double tol = 1e-10);
std::vector<double> policy_evaluation(const MdpSpec& spec, const std::vector<std::size_t>& policy, double tol = 1e-10);
std::vector<std::size_t> greedy_policy(const MdpSpec& spec, const std::vector<double>& values);
// max over s of |(TV)(s) - V(s)|
double bellman_residual(const MdpSpec& spec, const std::vector<double>& values);
// Expected undiscounted return of `policy` over one episode of spec.episode_len
// steps started from spec.initial.
double episode_return(const MdpSpec& spec, const std::vector<std::size_t>& policy);

// Seeded environment. Reset and step draws come from per-(episode, step)
// streams, so two agents that visit the same states see the same randomness.
class MaintenanceEnv {
 public:
  MaintenanceEnv(const MdpSpec& spec, std::uint64_t seed);

  std::size_t reset();
  // Returns (s', r, truncated). Truncation happens after episode_len steps.
  struct Outcome {
    std::size_t next_state;
    double reward;
    bool truncated;
  };
  Outcome step(std::size_t action);

  const MdpSpec& spec() const noexcept { return spec_; }
  std::size_t state() const noexcept { return state_; }
  std::size_t episode() const noexcept { return episode_; }
  std::size_t t() const noexcept { return t_; }

 private:
  const MdpSpec& spec_;
  Rng rng_;
  std::size_t episode_ = 0;
  std::size_t t_ = 0;
  std::size_t state_ = 0;
  bool started_ = false;
};

struct ObservedTransition {
  std::size_t s;
  std::size_t a;
  std::size_t s_next;
};

struct CalibrationData {
  std::vector<ObservedTransition> transitions;
  std::vector<double> bin_centers;      // mean predicted RUL per state
  std::vector<double> initial;          // empirical state frequencies
};

struct CalibrationOptions {
  std::size_t interval = 1;   // cycles between decisions
  std::size_t restore = 30;   // cycles of life a partial maintenance gives back
};

// Maintenance sequences derived from per-unit predicted-RUL trajectories,
// one decision every `interval` cycles (k):
//   NoAction            t -> t+k
//   PartialMaintenance  t -> max(0, t+k-restore)
//   CompleteOverhaul    t -> 0   (the unit's start-of-life state)
// Successors past the end of a trajectory are not observed.
CalibrationData build_calibration(const StateFeaturizer& featurizer,
                                  const std::vector<std::vector<double>>& predicted_rul_per_unit,
                                  const CalibrationOptions& options = {});

struct MdpCosts {
  std::vector<double> cost{0.0, 1.0, 5.0};
  std::vector<double> downtime{0.0, 0.5, 3.0};
};

// (count + smoothing) / (row count + smoothing * n_states). Rows without
// observations become uniform and are reported in `warnings`.
MdpSpec calibrate_mdp(const CalibrationData& data, const MdpCosts& costs, const RewardWeights& weights,
                      double smoothing = 1.0, std::vector<std::string>* warnings = nullptr);

// Two-state example: keep/repair with V* = (10, 8) at discount 0.9.
MdpSpec toy_mdp();
// Random valid spec with explicit gains in [-1, 1] (tests and benchmarks).
MdpSpec random_mdp(std::size_t n_states, std::size_t n_actions, double discount, Rng& rng);

enum class RuleRecommendation { ImmediateMaintenance, PeriodicInspection };
// ImmediateMaintenance iff predicted_rul < threshold.
RuleRecommendation rule_based_recommend(double predicted_rul, double threshold);
std::string to_string(RuleRecommendation r);

}  // namespace rulmdp
