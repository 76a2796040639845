#pragma once

// Comparison controllers: the single-level regularized scheme, the
// non-robust variant of the main controller, and a robust MPC built on a
// recursively estimated ARX model.

#include <vector>

#include <Eigen/Dense>

#include "rdpc/hankel.hpp"
#include "rdpc/predictor.hpp"
#include "rdpc/qp.hpp"
#include "rdpc/robust.hpp"

namespace rdpc {

struct SingleLevelSolution {
  Eigen::VectorXd u_pred;  // n_h*n_u
  Eigen::VectorXd y_pred;  // n_h*n_y
  Eigen::VectorXd g;       // n_c
  Eigen::VectorXd sigma;   // t_init*n_y, slack on the initial output match
  double objective_value = 0.0;
  Eigen::Index qp_iterations = 0;
};

// Joint one-shot optimization over (u_pred, y_pred, g, sigma): the control
// objective plus eta_g*|g|^2 + eta_sigma*|sigma|^2, subject to the stacked
// trajectory equalities and the input/output boxes. The disturbance rows are
// pinned to the recorded history and to w_bar (zeros when omitted).
SingleLevelSolution single_level_deepc(const HankelStack& stack, const ControlHistory& history,
                                       const ConstraintSets& sets, double eta_g,
                                       double eta_sigma, const ObjectiveSpec& objective,
                                       const Eigen::VectorXd& w_bar = Eigen::VectorXd(),
                                       const QpSettings& qp_settings = QpSettings());

// The main controller with the uncertainty tube collapsed to {w_bar} and the
// disturbance feedback disabled; everything else is identical.
ControlSolution non_robust_control(const KktFactor& factor, const HankelStack& stack,
                                   const ControlHistory& history, const Eigen::VectorXd& w_bar,
                                   const ConstraintSets& sets, const ObjectiveSpec& objective,
                                   const QpSettings& qp_settings = QpSettings());

// y_i = sum_j theta_y[j-1] y_{i-j} + theta_u[j-1] u_{i-j} + theta_w[j-1] w_{i-j}
// for lags j = 1..order; index 0 of each vector is the most recent lag.
struct ArxModel {
  std::vector<Eigen::MatrixXd> theta_y;  // each n_y x n_y
  std::vector<Eigen::MatrixXd> theta_u;  // each n_y x n_u
  std::vector<Eigen::MatrixXd> theta_w;  // each n_y x n_w

  Eigen::Index order() const { return static_cast<Eigen::Index>(theta_y.size()); }
  Eigen::Index n_y() const { return theta_y.empty() ? 0 : theta_y.front().rows(); }
  Eigen::Index n_u() const { return theta_u.empty() ? 0 : theta_u.front().cols(); }
  Eigen::Index n_w() const { return theta_w.empty() ? 0 : theta_w.front().cols(); }
  void validate() const;

  static ArxModel zeros(Eigen::Index order, Eigen::Index n_y, Eigen::Index n_u,
                        Eigen::Index n_w);
};

// Horizon output map y = t0 + tu*u_pred + tw*w_pred obtained by unrolling the
// ARX recursion from the history tail.
struct ArxAffineMap {
  Eigen::VectorXd t0;
  Eigen::MatrixXd tu, tw;
};

ArxAffineMap arx_affine_rollout(const ArxModel& model, const ControlHistory& history,
                                Eigen::Index n_h);

// Exponentially weighted recursive least squares over the vectorized model.
// theta column r holds output r's coefficients against the shared regressor
// [y lags | u lags | w lags], most recent lag first within each channel.
struct RlsState {
  Eigen::MatrixXd theta;  // p x n_y with p = order*(n_y+n_u+n_w)
  Eigen::MatrixXd p_cov;  // p x p, symmetric positive definite
  double lambda = 0.98;
  Eigen::Index order = 0, n_y = 0, n_u = 0, n_w = 0;

  void validate() const;
  ArxModel model() const;
  static RlsState from_model(const ArxModel& model, const Eigen::MatrixXd& p_cov,
                             double lambda);
};

// Regressor for the sample following `history` (uses the last model-order
// steps; history vectors are stacked oldest first).
Eigen::VectorXd arx_regressor(const ArxModel& model, const ControlHistory& history);

// Batch least squares on the dataset, covariance reset to p0_scale * I.
RlsState rls_init(const Dataset& data, Eigen::Index order, double lambda,
                  double p0_scale = 1e3);

RlsState rls_update(const RlsState& state, const Eigen::VectorXd& regressor,
                    const Eigen::VectorXd& y_measured);

// Robust MPC on the ARX model: the recursion is unrolled to an affine horizon
// map and fed through the same causal-feedback box robustification as the
// main controller.
ControlSolution rls_robust_mpc(const ArxModel& model, const ControlHistory& history,
                               Eigen::Index n_h, const Forecast& forecast,
                               const ConstraintSets& sets, const ObjectiveSpec& objective,
                               const QpSettings& qp_settings = QpSettings());

}  // namespace rdpc
