#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rulmdp/mdp.hpp"
#include "rulmdp/nn.hpp"
#include "rulmdp/optim.hpp"
#include "rulmdp/replay_buffer.hpp"

namespace rulmdp {

enum class AgentKind { Dqn, Ppo, Sac };
AgentKind agent_kind_from_string(const std::string& s);
std::string to_string(AgentKind k);

struct DqnConfig {
  double lr = 1e-4;
  double gamma = 0.99;
  std::size_t buffer = 100'000;
  std::size_t batch = 512;
  std::size_t target_sync = 50;  // gradient updates between target copies
  double eps_start = 1.0;
  double eps_end = 0.01;
  std::vector<std::size_t> hidden{256, 256};
  std::size_t train_freq = 4;  // environment steps per gradient update
  double reward_scale = 1.0;
};

struct PpoConfig {
  double lr = 1e-4;
  double gamma = 0.99;
  double clip = 0.2;
  double vf_coef = 0.5;
  double entropy_coef = 0.01;
  std::size_t batch = 64;  // minibatch
  std::size_t epochs = 10;
  double gae_lambda = 0.95;
  std::size_t rollout = 1000;
  std::vector<std::size_t> hidden{64, 64};
  double reward_scale = 1.0;
};

struct SacConfig {
  double lr = 3e-4;
  double gamma = 0.99;
  double temperature = 0.2;
  bool auto_temperature = false;
  double target_entropy = -2.0;
  double log_std = -2.0;  // kept for the record; the discrete policy has no std
  std::size_t buffer = 100'000;
  std::size_t batch = 256;
  double tau = 0.005;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t train_freq = 1;
  double reward_scale = 1.0;
};

Tensor one_hot(const std::vector<std::size_t>& states, std::size_t n_states);

// Linear from `start` at step 0 to `end` at step == total.
double epsilon_schedule(std::size_t step, std::size_t total, double start = 1.0, double end = 0.01);
// Uniform action with probability eps, else argmax with lowest-index ties.
std::size_t dqn_select(const std::vector<double>& q, double eps, Rng& rng);
std::size_t argmax(const std::vector<double>& v);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};
// values has one more entry than rewards (the bootstrap value after the last step).
GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values, const std::vector<bool>& dones,
              double gamma, double lambda);
// In place: mean 0, population std 1 (up to a 1e-8 guard).
void normalize_advantages(std::vector<double>& adv);
// min(ratio * adv, clip(ratio, 1 - clip, 1 + clip) * adv)
double clipped_surrogate(double ratio, double adv, double clip);
double entropy_from_logits(const std::vector<double>& logits);

class DqnLearner {
 public:
  DqnLearner(std::size_t n_states, std::size_t n_actions, const DqnConfig& config, Rng& init_rng);

  std::vector<double> q_values(std::size_t s) const;
  // One gradient step on the mean squared TD error against the target network
  // (zero bootstrap on done). Copies the online net into the target every
  // target_sync updates. Returns the loss.
  double update(const std::vector<Transition>& batch);
  void sync_target();

  Mlp& online() noexcept { return online_; }
  const Mlp& target() const noexcept { return target_; }
  std::size_t updates() const noexcept { return updates_; }

 private:
  std::size_t n_states_;
  DqnConfig config_;
  Mlp online_, target_;
  AdamState adam_;
  std::size_t updates_ = 0;
};

class SacLearner {
 public:
  SacLearner(std::size_t n_states, std::size_t n_actions, const SacConfig& config, Rng& init_rng);

  std::vector<double> logits(std::size_t s) const;
  // min(Q1, Q2)(s, .)
  std::vector<double> q_values(std::size_t s) const;
  std::size_t sample_action(std::size_t s, Rng& rng) const;

  struct Losses {
    double critic;
    double policy;
    double temperature;
  };
  Losses update(const std::vector<Transition>& batch);
  double temperature() const noexcept { return temperature_; }

  Mlp& actor() noexcept { return actor_; }
  Mlp& q1() noexcept { return q1_; }
  Mlp& q2() noexcept { return q2_; }
  const Mlp& q1_target() const noexcept { return q1_target_; }

 private:
  std::size_t n_states_;
  SacConfig config_;
  Mlp actor_, q1_, q2_, q1_target_, q2_target_;
  AdamState actor_adam_, q1_adam_, q2_adam_, alpha_adam_;
  double log_alpha_;
  double temperature_;
};

struct RolloutStep {
  std::size_t s;
  std::size_t a;
  double r;  // learning reward (already includes gamma * V(s') on truncation)
  bool done;  // end of a trajectory segment
  double log_prob;
  double value;
};

class PpoLearner {
 public:
  PpoLearner(std::size_t n_states, std::size_t n_actions, const PpoConfig& config, Rng& init_rng);

  std::vector<double> logits(std::size_t s) const;
  double value(std::size_t s) const;

  struct Losses {
    double policy;
    double value;
    double entropy;
  };
  // epochs x shuffled minibatches over the rollout; `last_value` bootstraps
  // the final step when it is not done.
  Losses update(const std::vector<RolloutStep>& rollout, double last_value, Rng& rng);

  Mlp& actor() noexcept { return actor_; }
  Mlp& critic() noexcept { return critic_; }

 private:
  std::size_t n_states_;
  PpoConfig config_;
  Mlp actor_, critic_;
  AdamState actor_adam_, critic_adam_;
};

struct AgentConfig {
  AgentKind kind = AgentKind::Dqn;
  DqnConfig dqn;
  PpoConfig ppo;
  SacConfig sac;
  std::size_t budget_steps = 50'000;
  std::uint64_t seed = 42;
  // Optional state -> action table followed (instead of exploring) during the
  // first warm_start_episodes episodes. Off-policy agents only.
  std::vector<std::size_t> warm_start;
  std::size_t warm_start_episodes = 0;
};

struct EpisodeRecord {
  std::size_t episode = 0;
  double total_reward = 0.0;  // environment reward, before any shaping
  double epsilon_or_entropy = 0.0;
};

struct PolicyRow {
  std::size_t state = 0;
  std::size_t action = 0;
  std::vector<double> q_or_logits;
};

struct AgentResult {
  std::vector<EpisodeRecord> curve;
  std::vector<PolicyRow> policy;
  std::vector<std::size_t> greedy() const;
};

struct StepContext {
  std::size_t episode;
  std::size_t step;  // within the episode
  std::size_t global_step;
  std::size_t state;
  std::size_t action;
  std::size_t next_state;
  double reward;
};
// Maps the environment reward of a step to the reward the agent learns from.
using RewardHook = std::function<double(const StepContext&)>;

// Trains one agent on a fresh environment seeded from config.seed. Episodes
// end by time limit only, which the agents bootstrap through. Only complete
// episodes are recorded.
// `on_episode` sees each completed episode as it is recorded.
using EpisodeHook = std::function<void(const EpisodeRecord&)>;
AgentResult train_agent(const MdpSpec& spec, const AgentConfig& config, const RewardHook& hook = {},
                        const EpisodeHook& on_episode = {});

// `episode,total_reward,epsilon_or_entropy`
std::string curve_to_csv(const std::vector<EpisodeRecord>& curve);
std::vector<EpisodeRecord> curve_from_csv(const std::string& text);
// `state,action,q_or_logits` with values joined by ';'
std::string policy_to_csv(const std::vector<PolicyRow>& policy);
std::vector<std::size_t> policy_actions_from_csv(const std::string& text);

}  // namespace rulmdp
