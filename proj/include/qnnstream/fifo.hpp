#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "qnnstream/error.hpp"

namespace qnn {

/// A stream element together with the logical cycle at which it becomes
/// visible to the consumer.
struct Element {
  std::int32_t value = 0;
  std::uint64_t time = 0;
};

/// Bounded single-producer single-consumer queue between two stages.
///
/// Besides the values it records the logical cycle of every pop, so a
/// producer can tell when the slot it is about to fill was freed: the k-th
/// push (k >= capacity) cannot happen before the (k - capacity)-th pop.
/// That makes the timing of the simulated pipeline independent of the order
/// in which the host schedules stages.
class Fifo {
 public:
  Fifo(std::size_t capacity, int element_bits, std::string name = {})
      : capacity_(capacity), bits_(element_bits), name_(std::move(name)),
        pop_times_(capacity, 0) {
    if (capacity == 0) throw FifoError("fifo '" + name_ + "' needs capacity >= 1");
  }

  Fifo(const Fifo&) = delete;
  Fifo& operator=(const Fifo&) = delete;

  std::size_t capacity() const { return capacity_; }
  int element_bits() const { return bits_; }
  const std::string& name() const { return name_; }

  bool can_push() const {
    std::lock_guard lk(m_);
    return q_.size() < capacity_;
  }

  /// Cycle at which the next push has a free slot.
  std::uint64_t space_time() const {
    std::lock_guard lk(m_);
    return pushed_ < capacity_ ? 0 : pop_times_[pushed_ % capacity_];
  }

  void push(Element e) {
    std::lock_guard lk(m_);
    if (q_.size() >= capacity_)
      throw FifoError("push into full fifo '" + name_ + "'");
    q_.push_back(e);
    ++pushed_;
    if (q_.size() > max_occupancy_) max_occupancy_ = q_.size();
  }

  std::optional<Element> peek() const {
    std::lock_guard lk(m_);
    if (q_.empty()) return std::nullopt;
    return q_.front();
  }

  Element pop(std::uint64_t at_cycle) {
    std::lock_guard lk(m_);
    if (q_.empty()) throw FifoError("pop from empty fifo '" + name_ + "'");
    Element e = q_.front();
    q_.pop_front();
    pop_times_[popped_ % capacity_] = at_cycle;
    ++popped_;
    return e;
  }

  std::size_t pushed() const {
    std::lock_guard lk(m_);
    return pushed_;
  }
  std::size_t popped() const {
    std::lock_guard lk(m_);
    return popped_;
  }
  std::size_t max_occupancy() const {
    std::lock_guard lk(m_);
    return max_occupancy_;
  }

 private:
  std::size_t capacity_;
  int bits_;
  std::string name_;
  mutable std::mutex m_;
  std::deque<Element> q_;
  std::vector<std::uint64_t> pop_times_;
  std::size_t pushed_ = 0;
  std::size_t popped_ = 0;
  std::size_t max_occupancy_ = 0;
};

}  // namespace qnn
