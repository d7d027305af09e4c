#include "rulmdp/feedback_queue.hpp"

#include <iostream>

#include "rulmdp/errors.hpp"

namespace rulmdp {

LabelResult FeedbackQueue::request(const FeedbackEvent& event, std::chrono::milliseconds timeout) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  std::unique_lock lock(mu_);
  if (closed_) return {FeedbackLabel::None, FeedbackSource::Timeout, 0.0};
  if (settled_.count(event.event_id)) throw ValidationError("feedback event id reused: " + std::to_string(event.event_id));
  settled_.emplace(event.event_id, FeedbackLabel::None);
  pending_ = event;
  answer_.reset();
  cv_.notify_all();
  const bool answered = cv_.wait_until(lock, start + timeout, [&] { return answer_.has_value() || closed_; });
  const double ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
  pending_.reset();
  LabelResult r;
  if (answered && answer_) {
    r = {*answer_, FeedbackSource::Human, ms};
  } else {
    // Timed out or closed: the event is settled as unlabeled.
    r = {FeedbackLabel::None, FeedbackSource::Timeout, ms};
  }
  answer_.reset();
  cv_.notify_all();
  return r;
}

std::optional<FeedbackEvent> FeedbackQueue::wait_pending(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return (pending_.has_value() && !answer_) || closed_; });
  if (pending_ && !answer_) return pending_;
  return std::nullopt;
}

std::optional<FeedbackEvent> FeedbackQueue::pending() const {
  std::lock_guard lock(mu_);
  if (pending_ && !answer_) return pending_;
  return std::nullopt;
}

FeedbackQueue::Submit FeedbackQueue::submit(std::uint64_t event_id, FeedbackLabel label) {
  if (label == FeedbackLabel::None) throw ValidationError("label must be positive or negative");
  std::lock_guard lock(mu_);
  auto it = settled_.find(event_id);
  if (it == settled_.end()) return Submit::UnknownEvent;
  if (!pending_ || pending_->event_id != event_id || answer_) return Submit::AlreadyLabeled;
  answer_ = label;
  it->second = label;
  cv_.notify_all();
  return Submit::Accepted;
}

void FeedbackQueue::close() {
  std::lock_guard lock(mu_);
  closed_ = true;
  cv_.notify_all();
}

bool FeedbackQueue::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

FeedbackProvider queue_provider(FeedbackQueue& queue, std::chrono::milliseconds timeout) {
  return [&queue, timeout](const FeedbackEvent& e) {
    if (queue.closed()) {
      std::cerr << "warning: feedback queue closed; event " << e.event_id << " gets no label\n";
      return LabelResult{FeedbackLabel::None, FeedbackSource::Timeout, 0.0};
    }
    return queue.request(e, timeout);
  };
}

}  // namespace rulmdp
