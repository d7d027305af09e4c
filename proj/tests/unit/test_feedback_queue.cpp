#include <doctest.h>

#include <thread>

#include "rulmdp/errors.hpp"
#include "rulmdp/feedback_queue.hpp"

using namespace rulmdp;
using namespace std::chrono_literals;

namespace {

FeedbackEvent event(std::uint64_t id) {
  FeedbackEvent e;
  e.event_id = id;
  return e;
}

}  // namespace

TEST_CASE("request times out without a label") {
  FeedbackQueue q;
  const auto r = q.request(event(1), 30ms);
  CHECK(r.label == FeedbackLabel::None);
  CHECK(r.source == FeedbackSource::Timeout);
  CHECK(r.latency_ms >= 25.0);
  CHECK_FALSE(q.pending());
  CHECK(q.submit(1, FeedbackLabel::Positive) == FeedbackQueue::Submit::AlreadyLabeled);
  CHECK(q.submit(2, FeedbackLabel::Positive) == FeedbackQueue::Submit::UnknownEvent);
}

TEST_CASE("the first submission wins") {
  FeedbackQueue q;
  std::thread handler([&] {
    const auto e = q.wait_pending(5s);
    REQUIRE(e);
    CHECK(e->event_id == 3);
    CHECK(q.submit(3, FeedbackLabel::Negative) == FeedbackQueue::Submit::Accepted);
    CHECK(q.submit(3, FeedbackLabel::Positive) == FeedbackQueue::Submit::AlreadyLabeled);
  });
  const auto r = q.request(event(3), 5s);
  handler.join();
  CHECK(r.label == FeedbackLabel::Negative);
  CHECK(r.source == FeedbackSource::Human);
  CHECK(q.submit(3, FeedbackLabel::Positive) == FeedbackQueue::Submit::AlreadyLabeled);
  CHECK_THROWS_AS(q.request(event(3), 1ms), ValidationError);
  CHECK_THROWS_AS(q.submit(3, FeedbackLabel::None), ValidationError);
}

TEST_CASE("wait_pending returns nothing when idle") {
  FeedbackQueue q;
  CHECK_FALSE(q.wait_pending(10ms));
}

TEST_CASE("close releases a blocked request") {
  FeedbackQueue q;
  std::thread closer([&] {
    q.wait_pending(5s);
    q.close();
  });
  const auto r = q.request(event(1), 10s);
  closer.join();
  CHECK(r.label == FeedbackLabel::None);
  CHECK(r.latency_ms < 5000.0);
  CHECK(q.closed());
  CHECK(q.request(event(2), 10s).label == FeedbackLabel::None);
}

TEST_CASE("queue provider forwards to the queue") {
  FeedbackQueue q;
  auto provider = queue_provider(q, 5s);
  std::thread handler([&] {
    const auto e = q.wait_pending(5s);
    REQUIRE(e);
    q.submit(e->event_id, FeedbackLabel::Positive);
  });
  const auto r = provider(event(10));
  handler.join();
  CHECK(r.label == FeedbackLabel::Positive);
}
