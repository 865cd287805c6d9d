#pragma once

#include "ex2/core.hpp"
#include "ex2/trajectory.hpp"

#include <concepts>
#include <deque>
#include <span>

namespace ex2 {

/// Random-access collection of states that negatives can be drawn from.
template <class P>
concept StatePool = requires(const P& p, std::size_t i) {
  { p.size() } -> std::convertible_to<std::size_t>;
  { p[i] } -> std::convertible_to<const State&>;
};

/// Bounded FIFO of visited states; the background distribution for every
/// discriminator.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return states_.size(); }
  bool empty() const { return states_.empty(); }
  long total_pushed() const { return total_pushed_; }

  /// Oldest state at index 0.
  const State& operator[](std::size_t i) const { return states_[i]; }
  auto begin() const { return states_.begin(); }
  auto end() const { return states_.end(); }

  void push(const State& s) {
    if (!states_.empty() && s.size() != states_.front().size())
      throw ConfigError("replay buffer: state dimension mismatch");
    states_.push_back(s);
    ++total_pushed_;
    if (states_.size() > capacity_) states_.pop_front();
  }

  void push_trajectories(std::span<const Trajectory> trajectories) {
    for (const auto& t : trajectories)
      for (const auto& s : t.states) push(s);
  }

  /// m uniform draws with replacement, deterministic in `seed`.
  std::vector<State> sample(std::size_t m, std::uint64_t seed) const {
    if (states_.empty()) throw EmptyInputError("cannot sample from an empty replay buffer");
    Rng rng(seed);
    std::vector<State> out;
    out.reserve(m);
    for (std::size_t i = 0; i < m; ++i) out.push_back(states_[uniform_index(rng, states_.size())]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<State> states_;
  long total_pushed_ = 0;
};

inline std::vector<State> sample_negatives(const ReplayBuffer& buffer, std::size_t m,
                                           std::uint64_t seed) {
  return buffer.sample(m, seed);
}

}  // namespace ex2
