#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace rdpc {

// splitmix64 step; used to derive independent substream seeds.
std::uint64_t mix_seed(std::uint64_t x);

// Deterministic random stream. The engine is std::mt19937_64 (bit-exact by
// the standard); distributions are hand-rolled on top of it so that sampled
// sequences do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Independent stream derived from this stream's seed and an index.
  Rng substream(std::uint64_t idx) const;

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal();   // standard normal, Box-Muller
  double normal(double mean, double stddev);

  Eigen::VectorXd uniform_vector(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);
  Eigen::VectorXd normal_vector(Eigen::Index n, double stddev);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rdpc
