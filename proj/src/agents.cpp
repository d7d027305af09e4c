#include "rulmdp/agents.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/errors.hpp"

namespace rulmdp {

AgentKind agent_kind_from_string(const std::string& s) {
  if (s == "dqn") return AgentKind::Dqn;
  if (s == "ppo") return AgentKind::Ppo;
  if (s == "sac") return AgentKind::Sac;
  throw ValidationError("unknown agent kind '" + s + "' (expected dqn, ppo or sac)");
}

std::string to_string(AgentKind k) {
  switch (k) {
    case AgentKind::Dqn: return "dqn";
    case AgentKind::Ppo: return "ppo";
    case AgentKind::Sac: return "sac";
  }
  return "?";
}

Tensor one_hot(const std::vector<std::size_t>& states, std::size_t n_states) {
  Tensor x({states.size(), n_states});
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i] >= n_states) throw ValidationError("state index out of range");
    x(i, states[i]) = 1.0;
  }
  return x;
}

double epsilon_schedule(std::size_t step, std::size_t total, double start, double end) {
  if (total == 0) return start;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return start + frac * (end - start);
}

std::size_t argmax(const std::vector<double>& v) {
  if (v.empty()) throw ValidationError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::size_t dqn_select(const std::vector<double>& q, double eps, Rng& rng) {
  if (!(eps >= 0.0 && eps <= 1.0)) throw ValidationError("epsilon must be in [0, 1]");
  if (rng.uniform() < eps) return rng.uniform_int(q.size());
  return argmax(q);
}

GaeResult gae(const std::vector<double>& r, const std::vector<double>& v, const std::vector<bool>& done, double gamma,
              double lambda) {
  const std::size_t T = r.size();
  if (v.size() != T + 1 || done.size() != T) throw ShapeError("gae: values must have T+1 entries and dones T");
  GaeResult g;
  g.advantages.assign(T, 0.0);
  g.returns.assign(T, 0.0);
  double next = 0.0;
  for (std::size_t i = T; i-- > 0;) {
    const double live = done[i] ? 0.0 : 1.0;
    const double delta = r[i] + gamma * v[i + 1] * live - v[i];
    next = delta + gamma * lambda * live * next;
    g.advantages[i] = next;
    g.returns[i] = next + v[i];
  }
  return g;
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(adv.size()));
  for (double& a : adv) a = (a - mean) / (sd + 1e-8);
}

double clipped_surrogate(double ratio, double adv, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  return std::min(ratio * adv, clipped * adv);
}

double entropy_from_logits(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  const double logz = m + std::log(z);
  double h = 0.0;
  for (double l : logits) {
    const double lp = l - logz;
    h -= std::exp(lp) * lp;
  }
  return h;
}

namespace {

std::vector<std::size_t> net_sizes(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  return std::vector<double>(t.ptr() + r * t.cols(), t.ptr() + (r + 1) * t.cols());
}

// Inputs are one-hot, so a batch holds at most n_states distinct rows. The
// networks run once per distinct state and the rows are gathered back, which
// leaves the loss and its gradient unchanged.
struct Dedup {
  std::vector<std::size_t> unique;
  std::vector<std::size_t> index;
};

Dedup dedup(const std::vector<std::size_t>& states, std::size_t n_states) {
  std::vector<std::size_t> slot(n_states, n_states);
  Dedup d;
  for (std::size_t s : states) {
    if (s >= n_states) throw ValidationError("state index out of range");
    slot[s] = 0;
  }
  for (std::size_t s = 0; s < n_states; ++s)
    if (slot[s] == 0) {
      slot[s] = d.unique.size();
      d.unique.push_back(s);
    }
  for (std::size_t s : states) d.index.push_back(slot[s]);
  return d;
}

Var batch_forward(Mlp& net, Tape& tape, const std::vector<std::size_t>& states, std::size_t n_states) {
  const Dedup d = dedup(states, n_states);
  return take_rows(net.forward(tape, tape.constant(one_hot(d.unique, n_states))), d.index);
}

Tensor batch_predict(const Mlp& net, const std::vector<std::size_t>& states, std::size_t n_states) {
  const Dedup d = dedup(states, n_states);
  const Tensor u = net.predict(one_hot(d.unique, n_states));
  Tensor out({states.size(), u.cols()});
  for (std::size_t i = 0; i < states.size(); ++i)
    std::copy(u.ptr() + d.index[i] * u.cols(), u.ptr() + (d.index[i] + 1) * u.cols(), out.ptr() + i * u.cols());
  return out;
}

void check_loss(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

struct BatchArrays {
  std::vector<std::size_t> s, a, s2;
  std::vector<double> r;
  std::vector<bool> done;
};

BatchArrays unpack(const std::vector<Transition>& batch) {
  if (batch.empty()) throw ValidationError("update needs a non-empty batch");
  BatchArrays b;
  for (const auto& t : batch) {
    b.s.push_back(t.s);
    b.a.push_back(t.a);
    b.s2.push_back(t.s_next);
    b.r.push_back(t.r);
    b.done.push_back(t.done);
  }
  return b;
}

}  // namespace

// ------------------------------------------------------------------- DQN

DqnLearner::DqnLearner(std::size_t n_states, std::size_t n_actions, const DqnConfig& c, Rng& init_rng)
    : n_states_(n_states), config_(c), online_(net_sizes(n_states, c.hidden, n_actions), init_rng, "q."),
      target_(online_) {
  if (!(c.eps_end >= 0.0 && c.eps_end <= c.eps_start && c.eps_start <= 1.0))
    throw ValidationError("DQN epsilon schedule must satisfy 0 <= end <= start <= 1");
  if (c.batch == 0 || c.target_sync == 0 || c.train_freq == 0) throw ValidationError("DQN sizes must be >= 1");
  adam_.config.lr = c.lr;
}

std::vector<double> DqnLearner::q_values(std::size_t s) const { return row_of(online_.predict(one_hot({s}, n_states_)), 0); }

void DqnLearner::sync_target() { target_.params().copy_values_from(online_.params()); }

double DqnLearner::update(const std::vector<Transition>& batch) {
  const BatchArrays b = unpack(batch);
  const std::size_t B = batch.size();
  const Tensor next_q = batch_predict(target_, b.s2, n_states_);
  Tensor y({B, 1});
  for (std::size_t i = 0; i < B; ++i) {
    const auto row = row_of(next_q, i);
    y[i] = b.r[i] + (b.done[i] ? 0.0 : config_.gamma * *std::max_element(row.begin(), row.end()));
  }
  Tape tape;
  Var q = batch_forward(online_, tape, b.s, n_states_);
  Var loss = mean(square(sub(gather_cols(q, b.a), tape.constant(std::move(y)))));
  const double lv = loss.value().item();
  check_loss(lv, "DQN loss");
  online_.params().zero_grad();
  tape.backward(loss);
  adam_step(online_.params(), adam_);
  check_finite_values(online_.params(), "DQN update");
  if (++updates_ % config_.target_sync == 0) sync_target();
  return lv;
}

// ------------------------------------------------------------------- SAC

SacLearner::SacLearner(std::size_t n_states, std::size_t n_actions, const SacConfig& c, Rng& init_rng)
    : n_states_(n_states), config_(c), actor_(net_sizes(n_states, c.hidden, n_actions), init_rng, "pi."),
      q1_(net_sizes(n_states, c.hidden, n_actions), init_rng, "q1."),
      q2_(net_sizes(n_states, c.hidden, n_actions), init_rng, "q2."), q1_target_(q1_), q2_target_(q2_),
      log_alpha_(std::log(c.temperature)), temperature_(c.temperature) {
  if (!(c.tau > 0.0 && c.tau <= 1.0)) throw ValidationError("SAC tau must be in (0, 1]");
  if (!(c.temperature > 0.0)) throw ValidationError("SAC temperature must be positive");
  if (c.batch == 0 || c.train_freq == 0) throw ValidationError("SAC sizes must be >= 1");
  actor_adam_.config.lr = q1_adam_.config.lr = q2_adam_.config.lr = alpha_adam_.config.lr = c.lr;
}

std::vector<double> SacLearner::logits(std::size_t s) const { return row_of(actor_.predict(one_hot({s}, n_states_)), 0); }

std::vector<double> SacLearner::q_values(std::size_t s) const {
  const Tensor x = one_hot({s}, n_states_);
  auto a = row_of(q1_.predict(x), 0);
  const auto b = row_of(q2_.predict(x), 0);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::min(a[i], b[i]);
  return a;
}

std::size_t SacLearner::sample_action(std::size_t s, Rng& rng) const {
  const Tensor p = softmax_rows(actor_.predict(one_hot({s}, n_states_)));
  return rng.categorical(p.data());
}

SacLearner::Losses SacLearner::update(const std::vector<Transition>& batch) {
  const BatchArrays b = unpack(batch);
  const std::size_t B = batch.size();
  const double alpha = temperature_;
  // Soft state value of s' under the current policy and target critics.
  const Tensor logits2 = batch_predict(actor_, b.s2, n_states_);
  const Tensor p2 = softmax_rows(logits2);
  const Tensor t1 = batch_predict(q1_target_, b.s2, n_states_), t2 = batch_predict(q2_target_, b.s2, n_states_);
  Tensor y({B, 1});
  for (std::size_t i = 0; i < B; ++i) {
    const auto lg = row_of(logits2, i);
    const double m = *std::max_element(lg.begin(), lg.end());
    double z = 0.0;
    for (double l : lg) z += std::exp(l - m);
    const double logz = m + std::log(z);
    double v = 0.0;
    for (std::size_t a = 0; a < lg.size(); ++a) v += p2(i, a) * (std::min(t1(i, a), t2(i, a)) - alpha * (lg[a] - logz));
    y[i] = b.r[i] + (b.done[i] ? 0.0 : config_.gamma * v);
  }

  Losses out{0.0, 0.0, 0.0};
  for (auto [net, adam] : {std::pair{&q1_, &q1_adam_}, std::pair{&q2_, &q2_adam_}}) {
    Tape tape;
    Var q = batch_forward(*net, tape, b.s, n_states_);
    Var loss = mean(square(sub(gather_cols(q, b.a), tape.constant(y))));
    check_loss(loss.value().item(), "SAC critic loss");
    out.critic += loss.value().item();
    net->params().zero_grad();
    tape.backward(loss);
    adam_step(net->params(), *adam);
    check_finite_values(net->params(), "SAC critic update");
  }

  Tensor minq = batch_predict(q1_, b.s, n_states_);
  const Tensor q2v = batch_predict(q2_, b.s, n_states_);
  for (std::size_t i = 0; i < minq.size(); ++i) minq[i] = std::min(minq[i], q2v[i]);
  double mean_neg_entropy = 0.0;
  {
    Tape tape;
    Var logits = batch_forward(actor_, tape, b.s, n_states_);
    Var logp = log_softmax_rows(logits);
    Var p = exp(logp);
    Var per = mul(p, sub(scale(logp, alpha), tape.constant(minq)));
    Var loss = scale(sum(per), 1.0 / static_cast<double>(B));
    out.policy = loss.value().item();
    check_loss(out.policy, "SAC policy loss");
    const Tensor& pv = p.value();
    const Tensor& lv = logp.value();
    for (std::size_t i = 0; i < pv.size(); ++i) mean_neg_entropy += pv[i] * lv[i];
    mean_neg_entropy /= static_cast<double>(B);
    actor_.params().zero_grad();
    tape.backward(loss);
    adam_step(actor_.params(), actor_adam_);
    check_finite_values(actor_.params(), "SAC policy update");
  }

  if (config_.auto_temperature) {
    // J(alpha) = -alpha * (E[log pi] + target_entropy); gradient taken w.r.t. log alpha.
    ParamSet la;
    la.add("log_alpha", Tensor::scalar(log_alpha_));
    la.at("log_alpha").grad[0] = -alpha * (mean_neg_entropy + config_.target_entropy);
    adam_step(la, alpha_adam_);
    log_alpha_ = la.at("log_alpha").value[0];
    temperature_ = std::exp(log_alpha_);
    out.temperature = -alpha * (mean_neg_entropy + config_.target_entropy);
  }

  soft_update(q1_target_.params(), q1_.params(), config_.tau);
  soft_update(q2_target_.params(), q2_.params(), config_.tau);
  return out;
}

// ------------------------------------------------------------------- PPO

PpoLearner::PpoLearner(std::size_t n_states, std::size_t n_actions, const PpoConfig& c, Rng& init_rng)
    : n_states_(n_states), config_(c), actor_(net_sizes(n_states, c.hidden, n_actions), init_rng, "pi."),
      critic_(net_sizes(n_states, c.hidden, 1), init_rng, "v.") {
  if (!(c.clip > 0.0 && c.clip < 1.0)) throw ValidationError("PPO clip must be in (0, 1)");
  if (c.batch == 0 || c.epochs == 0 || c.rollout == 0) throw ValidationError("PPO sizes must be >= 1");
  actor_adam_.config.lr = critic_adam_.config.lr = c.lr;
}

std::vector<double> PpoLearner::logits(std::size_t s) const { return row_of(actor_.predict(one_hot({s}, n_states_)), 0); }

double PpoLearner::value(std::size_t s) const { return critic_.predict(one_hot({s}, n_states_))[0]; }

PpoLearner::Losses PpoLearner::update(const std::vector<RolloutStep>& roll, double last_value, Rng& rng) {
  if (roll.empty()) throw ValidationError("PPO update needs a non-empty rollout");
  const std::size_t T = roll.size();
  std::vector<double> rewards(T), values(T + 1);
  std::vector<bool> dones(T);
  for (std::size_t i = 0; i < T; ++i) {
    rewards[i] = roll[i].r;
    values[i] = roll[i].value;
    dones[i] = roll[i].done;
  }
  values[T] = last_value;
  const GaeResult g = gae(rewards, values, dones, config_.gamma, config_.gae_lambda);

  Losses out{0.0, 0.0, 0.0};
  std::size_t n_batches = 0;
  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    const auto order = rng.permutation(T);
    for (std::size_t start = 0; start < T; start += config_.batch) {
      const std::size_t end = std::min(T, start + config_.batch);
      const std::size_t B = end - start;
      std::vector<std::size_t> s(B), a(B);
      std::vector<double> adv(B);
      Tensor old_logp({B, 1}), ret({B, 1});
      for (std::size_t i = 0; i < B; ++i) {
        const auto& st = roll[order[start + i]];
        s[i] = st.s;
        a[i] = st.a;
        adv[i] = g.advantages[order[start + i]];
        old_logp[i] = st.log_prob;
        ret[i] = g.returns[order[start + i]];
      }
      normalize_advantages(adv);
      const Tensor adv_t({B, 1}, adv);

      Tape tape;
      Var logp_all = log_softmax_rows(batch_forward(actor_, tape, s, n_states_));
      Var ratio = exp(sub(gather_cols(logp_all, a), tape.constant(old_logp)));
      if (!ratio.value().all_finite()) throw NumericError("non-finite PPO probability ratio");
      Var surr = minimum(mul_const(ratio, adv_t), mul_const(clamp(ratio, 1.0 - config_.clip, 1.0 + config_.clip), adv_t));
      Var policy_loss = scale(mean(surr), -1.0);
      Var entropy = scale(sum(mul(exp(logp_all), logp_all)), -1.0 / static_cast<double>(B));
      Var v = batch_forward(critic_, tape, s, n_states_);
      Var value_loss = mean(square(sub(v, tape.constant(ret))));
      Var loss = add(add(policy_loss, scale(value_loss, config_.vf_coef)), scale(entropy, -config_.entropy_coef));
      check_loss(loss.value().item(), "PPO loss");
      actor_.params().zero_grad();
      critic_.params().zero_grad();
      tape.backward(loss);
      adam_step(actor_.params(), actor_adam_);
      adam_step(critic_.params(), critic_adam_);
      check_finite_values(actor_.params(), "PPO policy update");
      check_finite_values(critic_.params(), "PPO value update");
      out.policy += policy_loss.value().item();
      out.value += value_loss.value().item();
      out.entropy += entropy.value().item();
      ++n_batches;
    }
  }
  out.policy /= static_cast<double>(n_batches);
  out.value /= static_cast<double>(n_batches);
  out.entropy /= static_cast<double>(n_batches);
  return out;
}

// --------------------------------------------------------------- harness

std::vector<std::size_t> AgentResult::greedy() const {
  std::vector<std::size_t> out;
  for (const auto& row : policy) out.push_back(row.action);
  return out;
}

namespace {

class Driver {
 public:
  virtual ~Driver() = default;
  virtual std::size_t act(std::size_t s, std::size_t global_step) = 0;
  // `t.r` is the learning reward; `truncated` marks the time-limit step.
  virtual void observe(const Transition& t, bool truncated, std::size_t global_step) = 0;
  virtual double episode_stat() = 0;
  virtual std::vector<double> table_row(std::size_t s) const = 0;
};

class DqnDriver : public Driver {
 public:
  DqnDriver(const MdpSpec& spec, const AgentConfig& c, Rng& root)
      : c_(c.dqn), budget_(c.budget_steps), init_(root.split("init")), act_(root.split("act")),
        sample_(root.split("sample")), learner_(spec.n_states, spec.n_actions, c.dqn, init_), buffer_(c.dqn.buffer) {}

  std::size_t act(std::size_t s, std::size_t step) override {
    eps_ = epsilon_schedule(step, budget_, c_.eps_start, c_.eps_end);
    return dqn_select(learner_.q_values(s), eps_, act_);
  }
  void observe(const Transition& t, bool, std::size_t step) override {
    buffer_.push(t);
    if (buffer_.size() >= c_.batch && (step + 1) % c_.train_freq == 0) learner_.update(buffer_.sample(c_.batch, sample_));
  }
  double episode_stat() override { return eps_; }
  std::vector<double> table_row(std::size_t s) const override { return learner_.q_values(s); }

 private:
  DqnConfig c_;
  std::size_t budget_;
  Rng init_, act_, sample_;
  DqnLearner learner_;
  ReplayBuffer buffer_;
  double eps_ = 1.0;
};

class SacDriver : public Driver {
 public:
  SacDriver(const MdpSpec& spec, const AgentConfig& c, Rng& root)
      : c_(c.sac), init_(root.split("init")), act_(root.split("act")), sample_(root.split("sample")),
        learner_(spec.n_states, spec.n_actions, c.sac, init_), buffer_(c.sac.buffer) {}

  std::size_t act(std::size_t s, std::size_t) override {
    entropy_sum_ += entropy_from_logits(learner_.logits(s));
    ++entropy_n_;
    return learner_.sample_action(s, act_);
  }
  void observe(const Transition& t, bool, std::size_t step) override {
    buffer_.push(t);
    if (buffer_.size() >= c_.batch && (step + 1) % c_.train_freq == 0) learner_.update(buffer_.sample(c_.batch, sample_));
  }
  double episode_stat() override {
    const double h = entropy_n_ ? entropy_sum_ / static_cast<double>(entropy_n_) : 0.0;
    entropy_sum_ = 0.0;
    entropy_n_ = 0;
    return h;
  }
  std::vector<double> table_row(std::size_t s) const override { return learner_.q_values(s); }

 private:
  SacConfig c_;
  Rng init_, act_, sample_;
  SacLearner learner_;
  ReplayBuffer buffer_;
  double entropy_sum_ = 0.0;
  std::size_t entropy_n_ = 0;
};

class PpoDriver : public Driver {
 public:
  PpoDriver(const MdpSpec& spec, const AgentConfig& c, Rng& root)
      : c_(c.ppo), init_(root.split("init")), act_(root.split("act")), sample_(root.split("sample")),
        learner_(spec.n_states, spec.n_actions, c.ppo, init_) {}

  std::size_t act(std::size_t s, std::size_t) override {
    const auto lg = learner_.logits(s);
    entropy_sum_ += entropy_from_logits(lg);
    ++entropy_n_;
    const Tensor x({1, lg.size()}, lg);
    const Tensor p = softmax_rows(x);
    const std::size_t a = act_.categorical(p.data());
    pending_log_prob_ = std::log(p[a]);
    pending_value_ = learner_.value(s);
    return a;
  }
  void observe(const Transition& t, bool truncated, std::size_t) override {
    double r = t.r;
    if (truncated) r += c_.gamma * learner_.value(t.s_next);
    rollout_.push_back({t.s, t.a, r, truncated || t.done, pending_log_prob_, pending_value_});
    if (rollout_.size() == c_.rollout) {
      const double last = rollout_.back().done ? 0.0 : learner_.value(t.s_next);
      learner_.update(rollout_, last, sample_);
      rollout_.clear();
    }
  }
  double episode_stat() override {
    const double h = entropy_n_ ? entropy_sum_ / static_cast<double>(entropy_n_) : 0.0;
    entropy_sum_ = 0.0;
    entropy_n_ = 0;
    return h;
  }
  std::vector<double> table_row(std::size_t s) const override { return learner_.logits(s); }

 private:
  PpoConfig c_;
  Rng init_, act_, sample_;
  PpoLearner learner_;
  std::vector<RolloutStep> rollout_;
  double pending_log_prob_ = 0.0, pending_value_ = 0.0;
  double entropy_sum_ = 0.0;
  std::size_t entropy_n_ = 0;
};

double reward_scale(const AgentConfig& c) {
  switch (c.kind) {
    case AgentKind::Dqn: return c.dqn.reward_scale;
    case AgentKind::Ppo: return c.ppo.reward_scale;
    case AgentKind::Sac: return c.sac.reward_scale;
  }
  return 1.0;
}

}  // namespace

AgentResult train_agent(const MdpSpec& spec, const AgentConfig& c, const RewardHook& hook,
                        const EpisodeHook& on_episode) {
  spec.validate();
  if (!c.warm_start.empty()) {
    if (c.kind == AgentKind::Ppo) throw ValidationError("warm start is only supported for off-policy agents");
    if (c.warm_start.size() != spec.n_states) throw ValidationError("warm start table needs one action per state");
    for (std::size_t a : c.warm_start)
      if (a >= spec.n_actions) throw ValidationError("warm start action out of range");
  }
  Rng root(c.seed);
  std::unique_ptr<Driver> d;
  switch (c.kind) {
    case AgentKind::Dqn: d = std::make_unique<DqnDriver>(spec, c, root); break;
    case AgentKind::Ppo: d = std::make_unique<PpoDriver>(spec, c, root); break;
    case AgentKind::Sac: d = std::make_unique<SacDriver>(spec, c, root); break;
  }
  const double scale_r = reward_scale(c);
  MaintenanceEnv env(spec, c.seed);
  AgentResult result;
  std::size_t global = 0;
  for (std::size_t episode = 0; global < c.budget_steps; ++episode) {
    std::size_t s = env.reset();
    double total = 0.0;
    bool complete = false;
    for (std::size_t t = 0; global < c.budget_steps; ++t, ++global) {
      std::size_t a = d->act(s, global);
      if (episode < c.warm_start_episodes && !c.warm_start.empty()) a = c.warm_start[s];
      const auto out = env.step(a);
      const double learn_r = hook ? hook({episode, t, global, s, a, out.next_state, out.reward}) : out.reward;
      if (!std::isfinite(learn_r)) throw NumericError("non-finite reward at step " + std::to_string(global));
      d->observe({s, a, learn_r * scale_r, out.next_state, false}, out.truncated, global);
      total += out.reward;
      s = out.next_state;
      if (out.truncated) {
        complete = true;
        ++global;
        break;
      }
    }
    const double stat = d->episode_stat();
    if (complete) {
      result.curve.push_back({episode, total, stat});
      if (on_episode) on_episode(result.curve.back());
    }
  }
  for (std::size_t s = 0; s < spec.n_states; ++s) {
    auto row = d->table_row(s);
    const std::size_t a = argmax(row);
    result.policy.push_back({s, a, std::move(row)});
  }
  return result;
}

std::string curve_to_csv(const std::vector<EpisodeRecord>& curve) {
  std::string out = "episode,total_reward,epsilon_or_entropy\n";
  for (const auto& e : curve)
    out += std::to_string(e.episode) + "," + format_double(e.total_reward) + "," + format_double(e.epsilon_or_entropy) + "\n";
  return out;
}

std::vector<EpisodeRecord> curve_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<EpisodeRecord> out;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1 || line.empty()) continue;
    EpisodeRecord e;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> e.episode >> c1 >> e.total_reward >> c2 >> e.epsilon_or_entropy) || c1 != ',' || c2 != ',')
      throw ParseError(n, "malformed curve row");
    out.push_back(e);
  }
  return out;
}

std::string policy_to_csv(const std::vector<PolicyRow>& policy) {
  std::string out = "state,action,q_or_logits\n";
  for (const auto& row : policy) {
    out += std::to_string(row.state) + "," + std::to_string(row.action) + ",";
    for (std::size_t i = 0; i < row.q_or_logits.size(); ++i) out += (i ? ";" : "") + format_double(row.q_or_logits[i]);
    out += "\n";
  }
  return out;
}

std::vector<std::size_t> policy_actions_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::size_t> out;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1 || line.empty()) continue;
    std::size_t s = 0, a = 0;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> s >> c1 >> a >> c2) || c1 != ',' || c2 != ',') throw ParseError(n, "malformed policy row");
    if (s != out.size()) throw ParseError(n, "policy rows must list states 0, 1, 2, ... in order");
    out.push_back(a);
  }
  return out;
}

}  // namespace rulmdp
