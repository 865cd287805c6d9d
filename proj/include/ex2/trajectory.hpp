#pragma once

#include "ex2/core.hpp"

#include <vector>

namespace ex2 {

/// An action is either a discrete index or a real vector.
struct Action {
  int index = -1;
  Eigen::VectorXd value;

  static Action discrete(int i) { return Action{i, {}}; }
  static Action continuous(Eigen::VectorXd v) { return Action{-1, std::move(v)}; }
  bool is_discrete() const { return index >= 0; }
};

struct Trajectory {
  std::vector<State> states;
  std::vector<Action> actions;
  std::vector<double> raw_rewards;
  std::vector<double> aug_rewards;
  bool terminal = false;

  std::size_t size() const { return states.size(); }

  double raw_return() const {
    double s = 0.0;
    for (double r : raw_rewards) s += r;
    return s;
  }

  bool aligned() const {
    return actions.size() == states.size() && raw_rewards.size() == states.size() &&
           aug_rewards.size() == states.size();
  }
};

}  // namespace ex2
