#include "rulmdp/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/errors.hpp"

namespace rulmdp {

const std::vector<std::string>& maintenance_action_names() {
  static const std::vector<std::string> names{"NoAction", "PartialMaintenance", "CompleteOverhaul"};
  return names;
}

void MdpSpec::validate() const {
  const std::size_t S = n_states, A = n_actions;
  if (S == 0 || A == 0) throw ValidationError("MDP needs at least one state and one action");
  if (P.size() != S * A * S) throw ValidationError("P has " + std::to_string(P.size()) + " entries, expected " + std::to_string(S * A * S));
  if (cost.size() != A) throw ValidationError("cost must have one entry per action");
  if (downtime.size() != A) throw ValidationError("downtime must have one entry per action");
  if (action_names.size() != A) throw ValidationError("action_names must have one entry per action");
  if (bin_centers.empty()) {
    if (rul_gain.size() != S * A) throw ValidationError("rul_gain must be n_states x n_actions");
  } else if (bin_centers.size() != S) {
    throw ValidationError("bin_centers must have one entry per state");
  }
  if (!rul_gain.empty() && rul_gain.size() != S * A) throw ValidationError("rul_gain must be n_states x n_actions");
  if (!(discount >= 0.0 && discount < 1.0)) throw ValidationError("discount must be in [0, 1)");
  if (episode_len == 0) throw ValidationError("episode_len must be >= 1");
  for (std::size_t a = 0; a < A; ++a)
    if (!(cost[a] >= 0.0) || !(downtime[a] >= 0.0)) throw ValidationError("cost and downtime must be non-negative");
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      double sum = 0.0;
      for (std::size_t s2 = 0; s2 < S; ++s2) {
        const double v = p(s, a, s2);
        if (!(v >= 0.0) || !std::isfinite(v))
          throw ValidationError("P[" + std::to_string(s) + "][" + std::to_string(a) + "] has a negative or non-finite entry");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("P[" + std::to_string(s) + "][" + std::to_string(a) + "] sums to " + format_double(sum));
    }
  if (initial.size() != S) throw ValidationError("initial distribution must have one entry per state");
  double isum = 0.0;
  for (double v : initial) {
    if (!(v >= 0.0)) throw ValidationError("initial distribution has a negative entry");
    isum += v;
  }
  if (std::abs(isum - 1.0) > 1e-9) throw ValidationError("initial distribution does not sum to 1");
}

nlohmann::ordered_json mdp_to_json(const MdpSpec& m) {
  nlohmann::ordered_json j;
  j["n_states"] = m.n_states;
  j["n_actions"] = m.n_actions;
  j["action_names"] = m.action_names;
  j["discount"] = m.discount;
  j["episode_len"] = m.episode_len;
  j["weights"] = {{"alpha", m.weights.alpha}, {"beta", m.weights.beta}, {"gamma", m.weights.gamma}};
  j["P"] = m.P;
  j["cost"] = m.cost;
  j["downtime"] = m.downtime;
  j["rul_gain"] = m.rul_gain;
  j["bin_centers"] = m.bin_centers;
  j["initial"] = m.initial;
  return j;
}

MdpSpec mdp_from_json(const nlohmann::json& j) {
  MdpSpec m;
  try {
    m.n_states = j.at("n_states").get<std::size_t>();
    m.n_actions = j.at("n_actions").get<std::size_t>();
    if (j.contains("action_names")) {
      m.action_names = j["action_names"].get<std::vector<std::string>>();
    } else if (m.n_actions == kMaintenanceActions) {
      m.action_names = maintenance_action_names();
    } else {
      for (std::size_t a = 0; a < m.n_actions; ++a) m.action_names.push_back("a" + std::to_string(a));
    }
    m.discount = j.value("discount", 0.99);
    m.episode_len = j.value("episode_len", std::size_t{200});
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      m.weights = {w.value("alpha", 1.0), w.value("beta", 1.0), w.value("gamma", 1.0)};
    }
    m.P = j.at("P").get<std::vector<double>>();
    m.cost = j.value("cost", std::vector<double>(m.n_actions, 0.0));
    m.downtime = j.value("downtime", std::vector<double>(m.n_actions, 0.0));
    m.rul_gain = j.value("rul_gain", std::vector<double>{});
    m.bin_centers = j.value("bin_centers", std::vector<double>{});
    m.initial = j.value("initial", std::vector<double>(m.n_states, 1.0 / static_cast<double>(m.n_states)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed MDP document: ") + e.what());
  }
  m.validate();
  return m;
}

MdpSpec load_mdp(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return mdp_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

double reward(const MdpSpec& m, std::size_t s, std::size_t a, std::size_t s2) {
  const double g = m.bin_centers.empty() ? m.gain(s, a) : m.bin_centers[s2] - m.bin_centers[s];
  return m.weights.alpha * g - m.weights.beta * m.cost[a] - m.weights.gamma * m.downtime[a];
}

double expected_reward(const MdpSpec& m, std::size_t s, std::size_t a) {
  double r = 0.0;
  const double* row = m.row(s, a);
  for (std::size_t s2 = 0; s2 < m.n_states; ++s2)
    if (row[s2] != 0.0) r += row[s2] * reward(m, s, a, s2);
  return r;
}

StepResult step(const MdpSpec& m, std::size_t s, std::size_t a, Rng& rng) {
  if (s >= m.n_states || a >= m.n_actions) throw ValidationError("state or action out of range");
  const std::size_t s2 = rng.categorical(std::span<const double>(m.row(s, a), m.n_states));
  return {s2, reward(m, s, a, s2)};
}

namespace {

std::vector<double> reward_table(const MdpSpec& m) {
  std::vector<double> R(m.n_states * m.n_actions);
  for (std::size_t s = 0; s < m.n_states; ++s)
    for (std::size_t a = 0; a < m.n_actions; ++a) R[s * m.n_actions + a] = expected_reward(m, s, a);
  return R;
}

double q_value(const MdpSpec& m, const std::vector<double>& R, const std::vector<double>& V, std::size_t s,
               std::size_t a) {
  const double* row = m.row(s, a);
  double ev = 0.0;
  for (std::size_t s2 = 0; s2 < m.n_states; ++s2) ev += row[s2] * V[s2];
  return R[s * m.n_actions + a] + m.discount * ev;
}

}  // namespace

std::vector<std::size_t> greedy_policy(const MdpSpec& m, const std::vector<double>& V) {
  const auto R = reward_table(m);
  std::vector<std::size_t> pi(m.n_states, 0);
  for (std::size_t s = 0; s < m.n_states; ++s) {
    double best = q_value(m, R, V, s, 0);
    for (std::size_t a = 1; a < m.n_actions; ++a) {
      const double q = q_value(m, R, V, s, a);
      if (q > best) {
        best = q;
        pi[s] = a;
      }
    }
  }
  return pi;
}

Solution value_iteration(const MdpSpec& m, double tol) {
  m.validate();
  if (!(tol > 0.0)) throw ValidationError("tolerance must be positive");
  const auto R = reward_table(m);
  const double threshold =
      m.discount == 0.0 ? std::numeric_limits<double>::infinity() : tol * (1.0 - m.discount) / (2.0 * m.discount);
  Solution sol;
  sol.values.assign(m.n_states, 0.0);
  std::vector<double> next(m.n_states);
  for (;;) {
    double delta = 0.0;
    for (std::size_t s = 0; s < m.n_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < m.n_actions; ++a) best = std::max(best, q_value(m, R, sol.values, s, a));
      next[s] = best;
      delta = std::max(delta, std::abs(best - sol.values[s]));
    }
    sol.values.swap(next);
    ++sol.iterations;
    if (delta < threshold) break;
    if (sol.iterations > 10'000'000) throw NumericError("value iteration did not converge");
  }
  sol.policy = greedy_policy(m, sol.values);
  return sol;
}

std::vector<double> policy_evaluation(const MdpSpec& m, const std::vector<std::size_t>& pi, double tol) {
  m.validate();
  if (pi.size() != m.n_states) throw ValidationError("policy must have one action per state");
  for (std::size_t a : pi)
    if (a >= m.n_actions) throw ValidationError("policy action out of range");
  const auto R = reward_table(m);
  const double threshold =
      m.discount == 0.0 ? std::numeric_limits<double>::infinity() : tol * (1.0 - m.discount) / (2.0 * m.discount);
  std::vector<double> V(m.n_states, 0.0), next(m.n_states);
  for (std::size_t it = 0;; ++it) {
    double delta = 0.0;
    for (std::size_t s = 0; s < m.n_states; ++s) {
      next[s] = q_value(m, R, V, s, pi[s]);
      delta = std::max(delta, std::abs(next[s] - V[s]));
    }
    V.swap(next);
    if (delta < threshold) break;
    if (it > 10'000'000) throw NumericError("policy evaluation did not converge");
  }
  return V;
}

double bellman_residual(const MdpSpec& m, const std::vector<double>& V) {
  const auto R = reward_table(m);
  double res = 0.0;
  for (std::size_t s = 0; s < m.n_states; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < m.n_actions; ++a) best = std::max(best, q_value(m, R, V, s, a));
    res = std::max(res, std::abs(best - V[s]));
  }
  return res;
}

double episode_return(const MdpSpec& m, const std::vector<std::size_t>& pi) {
  if (pi.size() != m.n_states) throw ValidationError("policy must have one action per state");
  const auto R = reward_table(m);
  std::vector<double> d = m.initial, next(m.n_states);
  double total = 0.0;
  for (std::size_t t = 0; t < m.episode_len; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t s = 0; s < m.n_states; ++s) {
      if (d[s] == 0.0) continue;
      total += d[s] * R[s * m.n_actions + pi[s]];
      const double* row = m.row(s, pi[s]);
      for (std::size_t s2 = 0; s2 < m.n_states; ++s2) next[s2] += d[s] * row[s2];
    }
    d.swap(next);
  }
  return total;
}

MaintenanceEnv::MaintenanceEnv(const MdpSpec& spec, std::uint64_t seed) : spec_(spec), rng_(Rng(seed).split("env")) {
  spec_.validate();
}

std::size_t MaintenanceEnv::reset() {
  if (started_) ++episode_;
  started_ = true;
  t_ = 0;
  Rng r = rng_.split(episode_).split(std::uint64_t{0});
  state_ = r.categorical(spec_.initial);
  return state_;
}

MaintenanceEnv::Outcome MaintenanceEnv::step(std::size_t action) {
  if (!started_ || t_ >= spec_.episode_len) throw Error("environment step outside an episode; call reset()");
  Rng r = rng_.split(episode_).split(t_ + 1);
  const StepResult sr = rulmdp::step(spec_, state_, action, r);
  state_ = sr.next_state;
  ++t_;
  return {sr.next_state, sr.reward, t_ >= spec_.episode_len};
}

CalibrationData build_calibration(const StateFeaturizer& f, const std::vector<std::vector<double>>& per_unit,
                                  const CalibrationOptions& o) {
  if (o.interval == 0) throw ValidationError("decision interval must be >= 1");
  if (o.restore == 0) throw ValidationError("restore must be >= 1");
  CalibrationData data;
  std::vector<double> rul_sum(kHealthStates, 0.0);
  std::vector<std::size_t> count(kHealthStates, 0);
  std::size_t total = 0;
  for (const auto& pred : per_unit) {
    if (pred.empty()) continue;
    const auto states = f.discretize_sequence(pred);
    const std::size_t n = states.size();
    for (std::size_t t = 0; t < n; ++t) {
      rul_sum[states[t]] += pred[t];
      ++count[states[t]];
      ++total;
      const auto nat = static_cast<std::size_t>(MaintenanceAction::NoAction);
      const auto part = static_cast<std::size_t>(MaintenanceAction::PartialMaintenance);
      const auto full = static_cast<std::size_t>(MaintenanceAction::CompleteOverhaul);
      const std::size_t ahead = t + o.interval;
      if (ahead < n) data.transitions.push_back({states[t], nat, states[ahead]});
      const std::size_t back = ahead > o.restore ? ahead - o.restore : 0;
      if (back < n) data.transitions.push_back({states[t], part, states[back]});
      data.transitions.push_back({states[t], full, states[0]});
    }
  }
  if (total == 0) throw ValidationError("calibration needs at least one prediction");
  data.bin_centers.assign(kHealthStates, 0.0);
  data.initial.assign(kHealthStates, 0.0);
  for (std::size_t s = 0; s < kHealthStates; ++s) {
    data.initial[s] = static_cast<double>(count[s]) / static_cast<double>(total);
    if (count[s]) data.bin_centers[s] = rul_sum[s] / static_cast<double>(count[s]);
  }
  // An empty bin takes the center of the nearest populated bin below it, or above.
  for (std::size_t s = 0; s < kHealthStates; ++s) {
    if (count[s]) continue;
    std::size_t below = s, above = s;
    while (below > 0 && !count[below]) --below;
    while (above + 1 < kHealthStates && !count[above]) ++above;
    data.bin_centers[s] = count[below] ? data.bin_centers[below] : data.bin_centers[above];
  }
  return data;
}

MdpSpec calibrate_mdp(const CalibrationData& data, const MdpCosts& costs, const RewardWeights& w, double smoothing,
                      std::vector<std::string>* warnings) {
  if (smoothing < 0.0) throw ValidationError("smoothing must be >= 0");
  const std::size_t S = kHealthStates, A = kMaintenanceActions;
  if (data.bin_centers.size() != S) throw ValidationError("calibration needs one bin center per state");
  std::vector<double> counts(S * A * S, 0.0);
  for (const auto& t : data.transitions) {
    if (t.s >= S || t.s_next >= S || t.a >= A) throw ValidationError("observed transition out of range");
    counts[(t.s * A + t.a) * S + t.s_next] += 1.0;
  }
  MdpSpec m;
  m.n_states = S;
  m.n_actions = A;
  m.action_names = maintenance_action_names();
  m.cost = costs.cost;
  m.downtime = costs.downtime;
  m.weights = w;
  m.bin_centers = data.bin_centers;
  m.initial = data.initial;
  m.P.assign(S * A * S, 0.0);
  m.rul_gain.assign(S * A, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      const double* c = counts.data() + (s * A + a) * S;
      double n = 0.0;
      for (std::size_t s2 = 0; s2 < S; ++s2) n += c[s2];
      double* row = m.P.data() + (s * A + a) * S;
      if (n == 0.0) {
        if (warnings)
          warnings->push_back("no observations for state " + std::to_string(s) + ", action " + m.action_names[a] +
                              "; using a uniform row");
        for (std::size_t s2 = 0; s2 < S; ++s2) row[s2] = 1.0 / static_cast<double>(S);
      } else {
        const double denom = n + smoothing * static_cast<double>(S);
        for (std::size_t s2 = 0; s2 < S; ++s2) row[s2] = (c[s2] + smoothing) / denom;
      }
      double g = 0.0;
      for (std::size_t s2 = 0; s2 < S; ++s2) g += row[s2] * (m.bin_centers[s2] - m.bin_centers[s]);
      m.rul_gain[s * A + a] = g;
    }
  m.validate();
  return m;
}

MdpSpec toy_mdp() {
  MdpSpec m;
  m.n_states = 2;
  m.n_actions = 2;
  m.action_names = {"keep", "repair"};
  // keep: s0 -> s0, s1 -> s1; repair: both -> s0
  m.P = {1, 0, 1, 0, 0, 1, 1, 0};
  m.cost = {0, 0};
  m.downtime = {0, 0};
  m.rul_gain = {1.0, 0.5, 0.0, -1.0};
  m.initial = {0.5, 0.5};
  m.discount = 0.9;
  m.episode_len = 200;
  m.validate();
  return m;
}

MdpSpec random_mdp(std::size_t S, std::size_t A, double discount, Rng& rng) {
  MdpSpec m;
  m.n_states = S;
  m.n_actions = A;
  for (std::size_t a = 0; a < A; ++a) m.action_names.push_back("a" + std::to_string(a));
  m.P.resize(S * A * S);
  for (std::size_t i = 0; i < S * A; ++i) {
    double sum = 0.0;
    for (std::size_t s2 = 0; s2 < S; ++s2) sum += (m.P[i * S + s2] = rng.uniform());
    for (std::size_t s2 = 0; s2 < S; ++s2) m.P[i * S + s2] /= sum;
  }
  m.cost.assign(A, 0.0);
  m.downtime.assign(A, 0.0);
  m.rul_gain.resize(S * A);
  for (double& g : m.rul_gain) g = rng.uniform(-1.0, 1.0);
  m.initial.assign(S, 1.0 / static_cast<double>(S));
  m.discount = discount;
  m.validate();
  return m;
}

RuleRecommendation rule_based_recommend(double predicted_rul, double threshold) {
  if (!(threshold > 0.0)) throw ValidationError("threshold must be positive");
  return predicted_rul < threshold ? RuleRecommendation::ImmediateMaintenance : RuleRecommendation::PeriodicInspection;
}

std::string to_string(RuleRecommendation r) {
  return r == RuleRecommendation::ImmediateMaintenance ? "ImmediateMaintenance" : "PeriodicInspection";
}

}  // namespace rulmdp
