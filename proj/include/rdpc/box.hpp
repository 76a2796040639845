#pragma once

#include <Eigen/Core>

namespace rdpc {

// Axis-aligned box [lo, hi]. Zero-width dimensions are allowed (singleton).
struct Box {
  Eigen::VectorXd lo, hi;

  Box() = default;
  Box(Eigen::VectorXd lower, Eigen::VectorXd upper);

  static Box centered(const Eigen::VectorXd& center, const Eigen::VectorXd& halfwidth);
  static Box singleton(const Eigen::VectorXd& point);

  Eigen::Index dim() const { return lo.size(); }
  Eigen::VectorXd center() const { return 0.5 * (lo + hi); }
  Eigen::VectorXd halfwidth() const { return 0.5 * (hi - lo); }

  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;
  bool is_point(double tol = 0.0) const;

  // Cartesian product [this; other].
  Box appended(const Box& other) const;
};

// Stacks per-step boxes into one box over the concatenated vector.
Box stack_boxes(const std::vector<Box>& steps);

}  // namespace rdpc
