#include "rulmdp/replay_buffer.hpp"

#include <algorithm>
#include <unordered_set>

#include "rulmdp/errors.hpp"

namespace rulmdp {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ValidationError("replay buffer capacity must be >= 1");
  data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(const Transition& t) {
  if (data_.size() < capacity_) {
    data_.push_back(t);
    return;
  }
  data_[head_] = t;
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) throw ValidationError("replay buffer index out of range");
  return data_[(head_ + i) % data_.size()];
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  const std::size_t n = data_.size();
  if (batch > n)
    throw ValidationError("cannot sample " + std::to_string(batch) + " transitions from a buffer holding " +
                          std::to_string(n));
  // Floyd's algorithm: distinct indices without an O(n) scratch array.
  std::unordered_set<std::size_t> seen;
  std::vector<Transition> out;
  out.reserve(batch);
  for (std::size_t j = n - batch; j < n; ++j) {
    std::size_t t = rng.uniform_int(j + 1);
    if (!seen.insert(t).second) {
      t = j;
      seen.insert(t);
    }
    out.push_back(data_[t]);
  }
  return out;
}

}  // namespace rulmdp
