#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>

#include "rulmdp/rlhf.hpp"

namespace rulmdp {

// Single-slot channel between a training loop and request handlers. At most
// one event is outstanding; labels are write-once.
class FeedbackQueue {
 public:
  // Training side. Publishes `event` and blocks until a label arrives, the
  // timeout expires (label none, source timeout) or the queue is closed.
  LabelResult request(const FeedbackEvent& event, std::chrono::milliseconds timeout);

  // Handler side. Waits up to `timeout` for an outstanding event.
  std::optional<FeedbackEvent> wait_pending(std::chrono::milliseconds timeout);
  std::optional<FeedbackEvent> pending() const;

  enum class Submit { Accepted, UnknownEvent, AlreadyLabeled };
  Submit submit(std::uint64_t event_id, FeedbackLabel label);

  // Unblocks every waiter; later requests return label none immediately.
  void close();
  bool closed() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<FeedbackEvent> pending_;
  std::optional<FeedbackLabel> answer_;
  std::map<std::uint64_t, FeedbackLabel> settled_;  // every event ever published
  bool closed_ = false;
};

FeedbackProvider queue_provider(FeedbackQueue& queue, std::chrono::milliseconds timeout);

}  // namespace rulmdp
