#pragma once

// Independent reference implementations used only by tests: a dense KKT solve
// for the lower-level problem, a direct linear-plant rollout, and box-vertex
// enumeration. These deliberately avoid the library's fast paths.

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "rdpc/box.hpp"
#include "rdpc/hankel.hpp"
#include "rdpc/rng.hpp"

namespace oracles {

struct DenseLowerSolution {
  Eigen::VectorXd g, kappa;
  Eigen::MatrixXd m;  // full KKT matrix
};

// Solves the lower-level problem by assembling the full KKT matrix
//   [H_y'H_y + diag(e_g), H'; H, 0] [g; kappa] = [H_y' y_init; r2]
// with a pivoted dense factorization.
inline DenseLowerSolution dense_lower_solve(const rdpc::HankelStack& stack,
                                            const Eigen::VectorXd& e_g,
                                            const Eigen::VectorXd& y_init,
                                            const Eigen::VectorXd& r2) {
  const Eigen::Index n_c = stack.n_c;
  const Eigen::MatrixXd h = stack.h();
  const Eigen::Index n_r = h.rows();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_c + n_r, n_c + n_r);
  m.topLeftCorner(n_c, n_c) = stack.y_init.transpose() * stack.y_init;
  m.topLeftCorner(n_c, n_c) += e_g.asDiagonal();
  m.topRightCorner(n_c, n_r) = h.transpose();
  m.bottomLeftCorner(n_r, n_c) = h;
  Eigen::VectorXd rhs(n_c + n_r);
  rhs << stack.y_init.transpose() * y_init, r2;
  const Eigen::VectorXd sol = m.colPivHouseholderQr().solve(rhs);
  return {sol.head(n_c), sol.tail(n_r), m};
}

// Minimal linear plant x+ = A x + B u + E w, y = C x + D u, for generating
// ground-truth trajectories.
struct TestPlant {
  Eigen::MatrixXd a, b, c, d, e;

  Eigen::Index n_x() const { return a.rows(); }
  Eigen::Index n_u() const { return b.cols(); }
  Eigen::Index n_y() const { return c.rows(); }
  Eigen::Index n_w() const { return e.cols(); }

  // Outputs for the input/disturbance sequences (one column per step).
  Eigen::MatrixXd rollout(const Eigen::VectorXd& x0, const Eigen::MatrixXd& u,
                          const Eigen::MatrixXd& w) const {
    Eigen::VectorXd x = x0;
    Eigen::MatrixXd y(n_y(), u.cols());
    for (Eigen::Index i = 0; i < u.cols(); ++i) {
      y.col(i) = c * x + d * u.col(i);
      x = a * x + b * u.col(i) + e * w.col(i);
    }
    return y;
  }
};

// The two-state benchmark plant used across the tests.
inline TestPlant second_order_plant() {
  TestPlant p;
  p.a.resize(2, 2);
  p.a << 0.9535, 0.0761, -0.8454, 0.5478;
  p.b.resize(2, 1);
  p.b << 0.0465, 0.8454;
  p.c.resize(1, 2);
  p.c << 1.0, 0.0;
  p.d = Eigen::MatrixXd::Zero(1, 1);
  p.e = p.b;
  return p;
}

// Noise-free dataset of the plant under i.i.d. uniform inputs/disturbances.
inline rdpc::Dataset excited_dataset(const TestPlant& plant, Eigen::Index t, std::uint64_t seed,
                                     double u_amp = 1.0, double w_amp = 1.0) {
  rdpc::Rng rng(seed);
  rdpc::Dataset ds(plant.n_u(), plant.n_w(), plant.n_y(), t);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(plant.n_x());
  for (Eigen::Index i = 0; i < t; ++i) {
    Eigen::VectorXd u(plant.n_u()), w(plant.n_w());
    for (Eigen::Index k = 0; k < u.size(); ++k) u[k] = rng.uniform(-u_amp, u_amp);
    for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = rng.uniform(-w_amp, w_amp);
    const Eigen::VectorXd y = plant.c * x + plant.d * u;
    ds.push(u, w, y);
    x = plant.a * x + plant.b * u + plant.e * w;
  }
  return ds;
}

// Calls fn(vertex) for every vertex of the box (2^dim of them).
inline void visit_vertices(const rdpc::Box& box, const std::function<void(const Eigen::VectorXd&)>& fn) {
  const Eigen::Index d = box.dim();
  const std::size_t count = std::size_t{1} << d;
  Eigen::VectorXd v(d);
  for (std::size_t mask = 0; mask < count; ++mask) {
    for (Eigen::Index i = 0; i < d; ++i) v[i] = (mask >> i) & 1 ? box.hi[i] : box.lo[i];
    fn(v);
  }
}

}  // namespace oracles
