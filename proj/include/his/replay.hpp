#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "his/rng.hpp"

namespace his {

// One stored interaction.
struct Transition {
  std::vector<std::vector<double>> obs;       // n x obs_dim
  std::vector<double> state;
  std::vector<double> joint_action;           // n * action_dim, components in (-1, 1)
  double reward = 0.0;
  std::vector<std::vector<double>> next_obs;
  std::vector<double> next_state;
  bool terminal = false;
  std::int64_t episode = 0;
};

// Fixed-capacity ring with FIFO eviction and uniform sampling. Entries keep a
// monotonically increasing id so n-step chains can be followed safely even
// after wraparound.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[static_cast<std::size_t>(next_id_ % capacity_)] = std::move(t);
    }
    ++next_id_;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::int64_t oldest_id() const { return next_id_ - static_cast<std::int64_t>(data_.size()); }
  std::int64_t newest_id() const { return next_id_ - 1; }

  bool contains(std::int64_t id) const { return id >= oldest_id() && id <= newest_id(); }

  const Transition& get(std::int64_t id) const {
    if (!contains(id)) throw std::out_of_range("ReplayBuffer: id evicted or not yet written");
    return data_[static_cast<std::size_t>(id % static_cast<std::int64_t>(capacity_))];
  }

  std::int64_t sample_id(Rng& rng) const {
    if (data_.empty()) throw std::logic_error("ReplayBuffer: empty");
    return oldest_id() + static_cast<std::int64_t>(rng.index(data_.size()));
  }

  // The transitions starting at `id`, following the stored trajectory for at
  // most max_len steps: stops at a terminal, an episode boundary, or the
  // write head.
  std::vector<const Transition*> segment(std::int64_t id, int max_len) const {
    std::vector<const Transition*> seg;
    const Transition* first = &get(id);
    seg.push_back(first);
    for (int k = 1; k < max_len; ++k) {
      if (seg.back()->terminal) break;
      const std::int64_t next = id + k;
      if (!contains(next)) break;
      const Transition& t = get(next);
      if (t.episode != first->episode) break;
      seg.push_back(&t);
    }
    return seg;
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> data_;
  std::int64_t next_id_ = 0;
};

}  // namespace his
