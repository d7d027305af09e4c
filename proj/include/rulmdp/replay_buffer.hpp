#pragma once

#include <cstddef>
#include <vector>

#include "rulmdp/rng.hpp"

namespace rulmdp {

// States are stored as indices; networks see them one-hot encoded.
struct Transition {
  std::size_t s = 0;
  std::size_t a = 0;
  double r = 0.0;
  std::size_t s_next = 0;
  bool done = false;
};

// Fixed-capacity FIFO ring.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  // `batch` distinct entries chosen uniformly. Throws when size() < batch.
  std::vector<Transition> sample(std::size_t batch, Rng& rng) const;

  std::size_t size() const noexcept { return data_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  // i-th oldest entry.
  const Transition& at(std::size_t i) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // next slot to overwrite once full
  std::vector<Transition> data_;
};

}  // namespace rulmdp
