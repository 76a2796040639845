#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "rdpc/hankel.hpp"

namespace rdpc {

// Measurement-noise covariance (symmetric PSD).
struct NoiseModel {
  Eigen::MatrixXd sigma_v;

  NoiseModel() = default;
  explicit NoiseModel(Eigen::MatrixXd cov);
  static NoiseModel isotropic(Eigen::Index n_y, double stddev);

  Eigen::Index n_y() const { return sigma_v.rows(); }
  double trace() const { return sigma_v.trace(); }
};

// Diagonal of E_g, the column-wise penalty on g. Entries must be positive;
// a decreasing profile discounts old data when tracking time-varying plants.
struct RegularizerWeights {
  Eigen::VectorXd e_g;

  static RegularizerWeights constant(Eigen::Index n_c, double value);
  // linspace(first, last) over the columns; non-increasing requires first >= last.
  static RegularizerWeights linear(Eigen::Index n_c, double first, double last);
  // t_init^exponent * tr(sigma_v) * I; exponent 2 matches the weight the
  // scheme itself uses, exponent 1 matches the convex bound's coefficient.
  static RegularizerWeights from_noise(Eigen::Index n_c, Eigen::Index t_init,
                                       const NoiseModel& noise, int tinit_exponent = 2);

  void validate() const;
  Eigen::Index n_c() const { return e_g.size(); }
};

// Diagnostic bound on the squared Wasserstein distance between the predicted
// and measured initial output distributions; tight but non-convex in g.
double wasserstein_bound_nonconvex(const Eigen::VectorXd& g, const Eigen::VectorXd& y_init,
                                   const HankelStack& stack, const NoiseModel& noise);

// Convex relaxation of the bound above; this is what the lower level
// minimizes (after dropping the constant offset).
double wasserstein_bound_convex(const Eigen::VectorXd& g, const Eigen::VectorXd& y_init,
                                const HankelStack& stack, const NoiseModel& noise,
                                int tinit_exponent = 1);

// Factorized KKT system of the lower-level problem
//   min 0.5*||H_y_init*g - y_init||^2 + 0.5*g'*E_g*g   s.t.  H*g = r2,
// stored so that g = m_top * [y_init; u_init; w_init; u_pred; w_pred].
// M_11^{-1} is kept in Woodbury form (only the m x m mid matrix is inverted,
// m = t_init*n_y), so factorization cost is independent of n_c^2 terms.
class KktFactor {
 public:
  KktFactor() = default;

  Eigen::Index t_init = 0, n_h = 0, n_u = 0, n_w = 0, n_y = 0, n_c = 0;
  Eigen::Index m = 0;    // t_init * n_y
  Eigen::Index n_r = 0;  // rows of H

  // rhs layout: [y_init | u_init | w_init | u_pred | w_pred]
  Eigen::Index off_y = 0, off_u_init = 0, off_w_init = 0, off_u_pred = 0, off_w_pred = 0;
  Eigen::Index rhs_len = 0;

  const Eigen::MatrixXd& m_top() const { return m_top_; }

  // Applies the cached M_11^{-1} to a block of vectors in O(n_c * m) each.
  Eigen::MatrixXd apply_m11_inv(const Eigen::MatrixXd& x) const;

  // Dual variable of the equality rows for the given rhs blocks.
  Eigen::VectorXd multipliers(const Eigen::VectorXd& y_init, const Eigen::VectorXd& r2) const;

  // Dense reconstructions; for diagnostics and tests only (O(n_c^2) memory).
  Eigen::MatrixXd m11_inv_dense() const;

  friend KktFactor factorize_kkt(const HankelStack& stack, const RegularizerWeights& weights);

 private:
  Eigen::MatrixXd m_top_;      // n_c x (m + n_r)
  Eigen::VectorXd e_g_inv_;    // n_c
  Eigen::MatrixXd w_egi_;      // n_c x m, E_g^{-1} H_y_init^T
  Eigen::LDLT<Eigen::MatrixXd> mid_ldlt_;  // of I_m + H_y_init E_g^{-1} H_y_init^T
  Eigen::MatrixXd s_inv_;      // n_r x n_r, (H M11^{-1} H^T)^{-1}
  Eigen::MatrixXd m_sch_hyt_;  // n_r x m, M_sch H_y_init^T
};

KktFactor factorize_kkt(const HankelStack& stack, const RegularizerWeights& weights);

Eigen::VectorXd solve_lower(const KktFactor& factor, const Eigen::VectorXd& y_init,
                            const Eigen::VectorXd& u_init, const Eigen::VectorXd& w_init,
                            const Eigen::VectorXd& u_pred, const Eigen::VectorXd& w_pred);

// y_pred = H_y_pred * g.
Eigen::VectorXd predict(const HankelStack& stack, const Eigen::VectorXd& g);

// g as an affine function of the free rhs blocks: g = g0 + g_u*u_pred + g_w*w_pred.
struct AffinePredictor {
  Eigen::VectorXd g0;
  Eigen::MatrixXd g_u, g_w;
};

AffinePredictor affine_predictor(const KktFactor& factor, const Eigen::VectorXd& y_init,
                                 const Eigen::VectorXd& u_init, const Eigen::VectorXd& w_init);

}  // namespace rdpc
