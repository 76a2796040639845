#include "rdpc/box.hpp"

#include <vector>

#include "rdpc/errors.hpp"

namespace rdpc {

Box::Box(Eigen::VectorXd lower, Eigen::VectorXd upper) : lo(std::move(lower)), hi(std::move(upper)) {
  if (lo.size() != hi.size()) throw DimensionError("Box: bound sizes differ");
  if ((hi.array() < lo.array()).any()) throw DimensionError("Box: hi < lo");
}

Box Box::centered(const Eigen::VectorXd& center, const Eigen::VectorXd& halfwidth) {
  if ((halfwidth.array() < 0.0).any()) throw DimensionError("Box: negative halfwidth");
  return Box(center - halfwidth, center + halfwidth);
}

Box Box::singleton(const Eigen::VectorXd& point) { return Box(point, point); }

bool Box::contains(const Eigen::VectorXd& x, double tol) const {
  if (x.size() != dim()) throw DimensionError("Box::contains: size mismatch");
  return (x.array() >= lo.array() - tol).all() && (x.array() <= hi.array() + tol).all();
}

bool Box::is_point(double tol) const { return ((hi - lo).array() <= tol).all(); }

Box Box::appended(const Box& other) const {
  Box out;
  out.lo.resize(dim() + other.dim());
  out.hi.resize(dim() + other.dim());
  out.lo << lo, other.lo;
  out.hi << hi, other.hi;
  return out;
}

Box stack_boxes(const std::vector<Box>& steps) {
  Eigen::Index total = 0;
  for (const Box& b : steps) total += b.dim();
  Box out;
  out.lo.resize(total);
  out.hi.resize(total);
  Eigen::Index at = 0;
  for (const Box& b : steps) {
    out.lo.segment(at, b.dim()) = b.lo;
    out.hi.segment(at, b.dim()) = b.hi;
    at += b.dim();
  }
  return out;
}

}  // namespace rdpc
