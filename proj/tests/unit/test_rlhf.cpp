#include <doctest.h>

#include "rulmdp/errors.hpp"
#include "rulmdp/rlhf.hpp"

using namespace rulmdp;

namespace {

MdpSpec short_toy() {
  MdpSpec m = toy_mdp();
  m.episode_len = 20;
  return m;
}

AgentConfig small_dqn() {
  AgentConfig c;
  c.budget_steps = 400;
  c.seed = 8;
  c.dqn.batch = 16;
  c.dqn.hidden = {8};
  return c;
}

}  // namespace

TEST_CASE("shaping is linear in delta") {
  FeedbackConfig f;
  f.r_positive = 2.0;
  f.r_negative = -3.0;
  for (double delta : {0.0, 0.25, 1.0}) {
    f.delta = delta;
    CHECK(shape_reward(1.0, FeedbackLabel::Positive, f) == doctest::Approx(1.0 + 2.0 * delta));
    CHECK(shape_reward(1.0, FeedbackLabel::Negative, f) == doctest::Approx(1.0 - 3.0 * delta));
    CHECK(shape_reward(1.0, FeedbackLabel::None, f) == 1.0);
  }
}

TEST_CASE("feedback config validation") {
  FeedbackConfig f;
  f.feedback_rate = 1.5;
  CHECK_THROWS_AS(f.validate(), ValidationError);
  f = {};
  f.delta = -0.1;
  CHECK_THROWS_AS(f.validate(), ValidationError);
}

TEST_CASE("oracle labels follow the optimal policy") {
  const std::vector<std::size_t> pi{0, 1};
  CHECK(oracle_feedback(0, 0, pi) == FeedbackLabel::Positive);
  CHECK(oracle_feedback(0, 1, pi) == FeedbackLabel::Negative);
  CHECK(oracle_feedback(1, 1, pi) == FeedbackLabel::Positive);
}

TEST_CASE("zero delta reproduces plain training") {
  const MdpSpec m = short_toy();
  const auto base = train_agent(m, small_dqn());
  FeedbackConfig f;
  f.delta = 0.0;
  const auto r = train_rlhf(m, small_dqn(), f, oracle_provider(value_iteration(m).policy));
  CHECK(curve_to_csv(r.agent.curve) == curve_to_csv(base.curve));
  CHECK(policy_to_csv(r.agent.policy) == policy_to_csv(base.policy));
  CHECK(r.log.size() == 400);
}

TEST_CASE("feedback rate selects steps") {
  const MdpSpec m = short_toy();
  FeedbackConfig f;
  f.feedback_rate = 0.0;
  CHECK(train_rlhf(m, small_dqn(), f, oracle_provider({0, 1})).log.empty());
  f.feedback_rate = 0.25;
  const auto r = train_rlhf(m, small_dqn(), f, oracle_provider({0, 1}));
  CHECK(r.log.size() > 60);
  CHECK(r.log.size() < 140);
  for (std::size_t i = 1; i < r.log.size(); ++i) CHECK(r.log[i].event_id > r.log[i - 1].event_id);
}

TEST_CASE("a replayed log reproduces the run") {
  const MdpSpec m = short_toy();
  FeedbackConfig f;
  f.feedback_rate = 0.5;
  const auto first = train_rlhf(m, small_dqn(), f, oracle_provider({0, 1}));
  const auto log = feedback_log_from_csv(feedback_log_to_csv(first.log));
  const auto again = train_rlhf(m, small_dqn(), f, replay_provider(log));
  CHECK(curve_to_csv(again.agent.curve) == curve_to_csv(first.agent.curve));
  // a log from a different seed disagrees on states or actions
  AgentConfig other = small_dqn();
  other.seed = 9;
  CHECK_THROWS_AS(train_rlhf(m, other, f, replay_provider(log)), DataError);
}

TEST_CASE("feedback log CSV round trip") {
  FeedbackEvent e;
  e.event_id = 7;
  e.episode = 2;
  e.step = 3;
  e.state = 4;
  e.action = 1;
  e.label = FeedbackLabel::Negative;
  e.source = FeedbackSource::Human;
  e.latency_ms = 12.5;
  const auto back = feedback_log_from_csv(feedback_log_to_csv({e}));
  REQUIRE(back.size() == 1);
  CHECK(back[0].event_id == 7);
  CHECK(back[0].step == 3);
  CHECK(back[0].label == FeedbackLabel::Negative);
  CHECK(back[0].source == FeedbackSource::Human);
  CHECK(back[0].latency_ms == 12.5);
  CHECK(feedback_log_to_csv({}) == feedback_log_header());
  CHECK_THROWS_AS(feedback_log_from_csv(feedback_log_header() + "\n1,0,0,0,0,maybe,human,0\n"), DataError);
}
