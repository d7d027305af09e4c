#include "rulmdp/federation.hpp"

#include <algorithm>
#include <iostream>
#include <map>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/errors.hpp"

namespace rulmdp {

std::uint64_t training_seed(std::uint64_t seed, std::size_t round, std::size_t machine) {
  if (round == 0 && machine == 0) return seed;
  return Rng(seed).split("federation").split(round).split(machine).next_u64();
}

std::string dispatch_params(const TransformerModel& model) {
  return serialize_checkpoint(to_json(model.config()), model.params());
}

TransformerModel receive_params(const std::string& payload) {
  Checkpoint ck = parse_checkpoint(payload);
  return TransformerModel(transformer_config_from_json(ck.config), std::move(ck.params));
}

ParamSet local_update(const TransformerModel& central, const std::vector<RulWindow>& local_windows,
                      std::size_t local_epochs, const ForecasterTrainConfig& train_config) {
  TransformerModel local = receive_params(dispatch_params(central));
  if (local_epochs > 0) {
    ForecasterTrainConfig tc = train_config;
    tc.epochs = local_epochs;
    train(local, local_windows, tc);
  }
  return receive_params(dispatch_params(local)).params();
}

ParamSet aggregate(const std::vector<ParamSet>& locals) {
  if (locals.empty()) throw ValidationError("aggregate needs at least one parameter set");
  for (std::size_t k = 1; k < locals.size(); ++k)
    if (!locals[k].same_layout(locals[0]))
      throw ShapeError("machine " + std::to_string(k) + " parameters do not match machine 0");
  ParamSet out;
  const double K = static_cast<double>(locals.size());
  std::vector<double> vals(locals.size());
  for (const auto& [name, p0] : locals[0]) {
    Tensor t = Tensor::zeros_like(p0.value);
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (std::size_t k = 0; k < locals.size(); ++k) vals[k] = locals[k].at(name).value[i];
      std::sort(vals.begin(), vals.end());
      double s = vals[0];
      for (std::size_t k = 1; k < vals.size(); ++k) s += vals[k];
      t[i] = s / K;
    }
    out.add(name, std::move(t));
  }
  return out;
}

double ensemble_predict(const std::vector<TransformerModel>& members, const Tensor& window) {
  if (members.empty()) throw ValidationError("ensemble has no members");
  double s = 0.0;
  for (const auto& m : members) s += predict(m, window);
  return s / static_cast<double>(members.size());
}

FederationResult run_federation(const TransformerConfig& model_config, const FederationConfig& config,
                                const std::vector<std::vector<RulWindow>>& machine_windows,
                                const std::vector<RulWindow>& validation) {
  if (config.machines == 0) throw ValidationError("machines must be >= 1");
  if (config.rounds == 0) throw ValidationError("rounds must be >= 1");
  if (machine_windows.size() != config.machines)
    throw ValidationError("expected " + std::to_string(config.machines) + " machine datasets, got " +
                          std::to_string(machine_windows.size()));

  FederationResult result{TransformerModel(model_config, config.seed), {}, {}};
  for (std::size_t k = 0; k < config.machines; ++k)
    if (machine_windows[k].empty()) std::cerr << "warning: machine " << k << " has no data; skipped\n";

  for (std::size_t r = 0; r < config.rounds; ++r) {
    const std::string payload = dispatch_params(result.central);
    const TransformerModel central = receive_params(payload);
    std::vector<ParamSet> locals;
    std::vector<std::pair<std::size_t, double>> local_rmse;
    for (std::size_t k = 0; k < config.machines; ++k) {
      if (machine_windows[k].empty()) continue;
      ForecasterTrainConfig tc{config.local_epochs, config.batch_size, config.lr, config.loss,
                               training_seed(config.seed, r, k)};
      ParamSet p = local_update(central, machine_windows[k], config.local_epochs, tc);
      const TransformerModel local(model_config, std::move(p));
      local_rmse.emplace_back(k, evaluate(local, machine_windows[k]).rmse);
      locals.push_back(receive_params(dispatch_params(local)).params());
    }
    if (locals.empty()) throw ValidationError("every machine has empty data");
    result.central = TransformerModel(model_config, aggregate(locals));
    const double central_rmse = validation.empty() ? 0.0 : evaluate(result.central, validation).rmse;
    for (const auto& [k, rmse] : local_rmse) result.metrics.push_back({r, k, rmse, central_rmse});
  }
  for (const auto& w : machine_windows) result.machine_outputs.push_back(w.empty() ? std::vector<double>{} : predict_all(result.central, w));
  return result;
}

std::vector<std::vector<RulWindow>> split_by_unit(const std::vector<RulWindow>& windows, std::size_t machines) {
  if (machines == 0) throw ValidationError("machines must be >= 1");
  std::vector<std::vector<RulWindow>> out(machines);
  std::map<std::uint32_t, std::size_t> slot;
  for (const auto& w : windows) {
    auto it = slot.find(w.unit_id);
    if (it == slot.end()) it = slot.emplace(w.unit_id, slot.size() % machines).first;
    out[it->second].push_back(w);
  }
  return out;
}

std::string round_metrics_to_csv(const std::vector<RoundMetric>& metrics) {
  std::string out = "round,machine_id,local_rmse,central_rmse\n";
  for (const auto& m : metrics)
    out += std::to_string(m.round) + "," + std::to_string(m.machine_id) + "," + format_double(m.local_rmse) + "," +
           format_double(m.central_rmse) + "\n";
  return out;
}

}  // namespace rulmdp
