#include "rdpc/rng.hpp"

#include <cmath>

#include "rdpc/errors.hpp"

namespace rdpc {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::substream(std::uint64_t idx) const {
  return Rng(mix_seed(seed_ ^ mix_seed(idx + 1)));
}

double Rng::uniform() {
  // 53 high bits -> double in [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  if (hi < lo) throw DimensionError("uniform: hi < lo");
  return lo + (hi - lo) * uniform();
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on (0, 1] uniforms; independent of library distributions.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

Eigen::VectorXd Rng::uniform_vector(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  if (lo.size() != hi.size()) throw DimensionError("uniform_vector: bound sizes differ");
  Eigen::VectorXd out(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) out[i] = uniform(lo[i], hi[i]);
  return out;
}

Eigen::VectorXd Rng::normal_vector(Eigen::Index n, double stddev) {
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = stddev * normal();
  return out;
}

}  // namespace rdpc
