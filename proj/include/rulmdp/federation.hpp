#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rulmdp/forecaster.hpp"

namespace rulmdp {

struct FederationConfig {
  std::size_t machines = 4;
  std::size_t rounds = 3;
  std::size_t local_epochs = 20;  // matches the single-run epoch default
  std::size_t batch_size = 32;
  double lr = 1e-3;
  LossKind loss = LossKind::Mse;
  std::uint64_t seed = 42;
};

// Seed of the local training run of `machine` in `round`. train-forecaster uses
// (seed, 0, 0) so a one-machine, one-round federation reproduces it exactly.
std::uint64_t training_seed(std::uint64_t seed, std::size_t round, std::size_t machine);

// Transport boundary: parameters travel as checkpoint text in both directions.
std::string dispatch_params(const TransformerModel& model);
TransformerModel receive_params(const std::string& payload);

// Trains a copy of `central` on local data. Zero epochs returns the central
// parameters unchanged.
ParamSet local_update(const TransformerModel& central, const std::vector<RulWindow>& local_windows,
                      std::size_t local_epochs, const ForecasterTrainConfig& train_config);

// Element-wise mean. Each element's K values are summed in sorted order, so the
// result does not depend on machine order.
ParamSet aggregate(const std::vector<ParamSet>& locals);

// (1/m) sum_i f_i(window)
double ensemble_predict(const std::vector<TransformerModel>& members, const Tensor& window);

struct RoundMetric {
  std::size_t round = 0;
  std::size_t machine_id = 0;
  double local_rmse = 0.0;    // local model on its own data
  double central_rmse = 0.0;  // aggregated model on the validation windows
};

struct FederationResult {
  TransformerModel central;
  std::vector<RoundMetric> metrics;
  // Final central-model predictions on each machine's windows.
  std::vector<std::vector<double>> machine_outputs;
};

// Machines with no windows are skipped (with a warning on stderr).
FederationResult run_federation(const TransformerConfig& model_config, const FederationConfig& config,
                                const std::vector<std::vector<RulWindow>>& machine_windows,
                                const std::vector<RulWindow>& validation);

// Round-robin assignment of units (by order of first appearance) to machines.
std::vector<std::vector<RulWindow>> split_by_unit(const std::vector<RulWindow>& windows, std::size_t machines);

// `round,machine_id,local_rmse,central_rmse`
std::string round_metrics_to_csv(const std::vector<RoundMetric>& metrics);

}  // namespace rulmdp
