#include "rdpc/predictor.hpp"

#include <cmath>

#include "rdpc/errors.hpp"

namespace rdpc {

NoiseModel::NoiseModel(Eigen::MatrixXd cov) : sigma_v(std::move(cov)) {
  if (sigma_v.rows() != sigma_v.cols()) throw DimensionError("NoiseModel: covariance not square");
  if (!sigma_v.isApprox(sigma_v.transpose(), 1e-12))
    throw DimensionError("NoiseModel: covariance not symmetric");
  Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma_v);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() < -1e-12).any())
    throw DimensionError("NoiseModel: covariance not positive semidefinite");
}

NoiseModel NoiseModel::isotropic(Eigen::Index n_y, double stddev) {
  if (stddev < 0.0) throw ConfigError("NoiseModel: negative stddev");
  return NoiseModel(stddev * stddev * Eigen::MatrixXd::Identity(n_y, n_y));
}

RegularizerWeights RegularizerWeights::constant(Eigen::Index n_c, double value) {
  RegularizerWeights w{Eigen::VectorXd::Constant(n_c, value)};
  w.validate();
  return w;
}

RegularizerWeights RegularizerWeights::linear(Eigen::Index n_c, double first, double last) {
  RegularizerWeights w{Eigen::VectorXd::LinSpaced(n_c, first, last)};
  if (n_c == 1) w.e_g[0] = first;
  w.validate();
  return w;
}

RegularizerWeights RegularizerWeights::from_noise(Eigen::Index n_c, Eigen::Index t_init,
                                                  const NoiseModel& noise, int tinit_exponent) {
  if (tinit_exponent != 1 && tinit_exponent != 2)
    throw ConfigError("RegularizerWeights: tinit_exponent must be 1 or 2");
  const double t = static_cast<double>(t_init);
  const double scale = (tinit_exponent == 2 ? t * t : t) * noise.trace();
  return constant(n_c, scale);
}

void RegularizerWeights::validate() const {
  if (e_g.size() == 0) throw ConfigError("RegularizerWeights: empty weight vector");
  if ((e_g.array() <= 0.0).any()) throw ConfigError("RegularizerWeights: entries must be > 0");
}

namespace {
void check_bound_dims(const Eigen::VectorXd& g, const Eigen::VectorXd& y_init,
                      const HankelStack& stack, const NoiseModel& noise) {
  if (g.size() != stack.n_c) throw DimensionError("wasserstein bound: g length != n_c");
  if (y_init.size() != stack.t_init * stack.n_y)
    throw DimensionError("wasserstein bound: y_init length mismatch");
  if (noise.n_y() != stack.n_y) throw DimensionError("wasserstein bound: noise dim mismatch");
}
}  // namespace

double wasserstein_bound_nonconvex(const Eigen::VectorXd& g, const Eigen::VectorXd& y_init,
                                   const HankelStack& stack, const NoiseModel& noise) {
  check_bound_dims(g, y_init, stack, noise);
  const double residual = (stack.y_init * g - y_init).squaredNorm();
  const double root = std::sqrt(static_cast<double>(stack.t_init)) * g.norm() - 1.0;
  return residual + root * root * noise.trace();
}

double wasserstein_bound_convex(const Eigen::VectorXd& g, const Eigen::VectorXd& y_init,
                                const HankelStack& stack, const NoiseModel& noise,
                                int tinit_exponent) {
  check_bound_dims(g, y_init, stack, noise);
  if (tinit_exponent != 1 && tinit_exponent != 2)
    throw ConfigError("wasserstein_bound_convex: tinit_exponent must be 1 or 2");
  const double t = static_cast<double>(stack.t_init);
  const double coeff = (tinit_exponent == 2 ? t * t : t) * noise.trace();
  const double residual = (stack.y_init * g - y_init).squaredNorm();
  return residual + coeff * (g.squaredNorm() + 1.0);
}

KktFactor factorize_kkt(const HankelStack& stack, const RegularizerWeights& weights) {
  weights.validate();
  if (weights.n_c() != stack.n_c) throw ConfigError("factorize_kkt: weight length != n_c");

  KktFactor f;
  f.t_init = stack.t_init;
  f.n_h = stack.n_h;
  f.n_u = stack.n_u;
  f.n_w = stack.n_w;
  f.n_y = stack.n_y;
  f.n_c = stack.n_c;
  f.m = stack.t_init * stack.n_y;
  f.n_r = stack.h_rows();
  f.off_y = 0;
  f.off_u_init = f.m;
  f.off_w_init = f.off_u_init + stack.t_init * stack.n_u;
  f.off_u_pred = f.off_w_init + stack.t_init * stack.n_w;
  f.off_w_pred = f.off_u_pred + stack.n_h * stack.n_u;
  f.rhs_len = f.off_w_pred + stack.n_h * stack.n_w;

  f.e_g_inv_ = weights.e_g.cwiseInverse();
  f.w_egi_ = f.e_g_inv_.asDiagonal() * stack.y_init.transpose();  // n_c x m

  // Woodbury mid matrix: I_m + H_y_init E_g^{-1} H_y_init^T; PD by construction.
  Eigen::MatrixXd m_mid = Eigen::MatrixXd::Identity(f.m, f.m) + stack.y_init * f.w_egi_;
  f.mid_ldlt_.compute(m_mid);
  if (f.mid_ldlt_.info() != Eigen::Success)
    throw FactorizationError("factorize_kkt: mid-matrix factorization failed");

  const Eigen::MatrixXd h = stack.h();

  // a = M11^{-1} H^T, s = H M11^{-1} H^T. s is PD iff H has full row rank.
  const Eigen::MatrixXd a = f.apply_m11_inv(h.transpose());  // n_c x n_r
  const Eigen::MatrixXd s = h * a;                           // n_r x n_r
  Eigen::LDLT<Eigen::MatrixXd> s_ldlt(s);
  const Eigen::VectorXd d = s_ldlt.vectorD();
  const double d_max = d.size() ? d.maxCoeff() : 0.0;
  if (s_ldlt.info() != Eigen::Success || d_max <= 0.0 ||
      (d.array() <= d_max * 1e-12 * static_cast<double>(f.n_r)).any())
    throw FactorizationError(
        "factorize_kkt: equality stack H is row-rank deficient; the data does not persistently "
        "excite the combined input/disturbance channels (Assumption 1)");

  f.s_inv_ = s_ldlt.solve(Eigen::MatrixXd::Identity(f.n_r, f.n_r));

  // b = M11^{-1} H_y_init^T; top blocks of the inverse folded with H_y_init^T:
  //   g = (M11^{-1} - M11^{-1} H^T M_sch) H_y_init^T y_init + M_sch^T r2.
  const Eigen::MatrixXd b = f.apply_m11_inv(stack.y_init.transpose());  // n_c x m
  f.m_sch_hyt_ = s_ldlt.solve(h * b);                                   // n_r x m

  f.m_top_.resize(f.n_c, f.m + f.n_r);
  f.m_top_.leftCols(f.m) = b - a * f.m_sch_hyt_;
  f.m_top_.rightCols(f.n_r) = a * f.s_inv_;
  return f;
}

Eigen::MatrixXd KktFactor::apply_m11_inv(const Eigen::MatrixXd& x) const {
  if (x.rows() != n_c) throw DimensionError("apply_m11_inv: row count != n_c");
  const Eigen::MatrixXd t = w_egi_.transpose() * x;  // m x k
  return e_g_inv_.asDiagonal() * x - w_egi_ * mid_ldlt_.solve(t);
}

Eigen::VectorXd KktFactor::multipliers(const Eigen::VectorXd& y_init,
                                       const Eigen::VectorXd& r2) const {
  if (y_init.size() != m || r2.size() != n_r) throw DimensionError("multipliers: rhs mismatch");
  return m_sch_hyt_ * y_init - s_inv_ * r2;
}

Eigen::MatrixXd KktFactor::m11_inv_dense() const {
  return apply_m11_inv(Eigen::MatrixXd::Identity(n_c, n_c));
}

namespace {
Eigen::VectorXd stack_rhs(const KktFactor& f, const Eigen::VectorXd& y_init,
                          const Eigen::VectorXd& u_init, const Eigen::VectorXd& w_init,
                          const Eigen::VectorXd& u_pred, const Eigen::VectorXd& w_pred) {
  if (y_init.size() != f.off_u_init - f.off_y || u_init.size() != f.off_w_init - f.off_u_init ||
      w_init.size() != f.off_u_pred - f.off_w_init || u_pred.size() != f.off_w_pred - f.off_u_pred ||
      w_pred.size() != f.rhs_len - f.off_w_pred)
    throw DimensionError("solve_lower: rhs block size mismatch");
  Eigen::VectorXd rhs(f.rhs_len);
  rhs << y_init, u_init, w_init, u_pred, w_pred;
  return rhs;
}
}  // namespace

Eigen::VectorXd solve_lower(const KktFactor& factor, const Eigen::VectorXd& y_init,
                            const Eigen::VectorXd& u_init, const Eigen::VectorXd& w_init,
                            const Eigen::VectorXd& u_pred, const Eigen::VectorXd& w_pred) {
  return factor.m_top() * stack_rhs(factor, y_init, u_init, w_init, u_pred, w_pred);
}

Eigen::VectorXd predict(const HankelStack& stack, const Eigen::VectorXd& g) {
  if (g.size() != stack.n_c) throw DimensionError("predict: g length != n_c");
  return stack.y_pred * g;
}

AffinePredictor affine_predictor(const KktFactor& factor, const Eigen::VectorXd& y_init,
                                 const Eigen::VectorXd& u_init, const Eigen::VectorXd& w_init) {
  const Eigen::Index len_u = factor.off_w_pred - factor.off_u_pred;
  const Eigen::Index len_w = factor.rhs_len - factor.off_w_pred;
  const Eigen::VectorXd rhs_fixed =
      stack_rhs(factor, y_init, u_init, w_init, Eigen::VectorXd::Zero(len_u),
                Eigen::VectorXd::Zero(len_w));
  AffinePredictor p;
  p.g0 = factor.m_top() * rhs_fixed;
  p.g_u = factor.m_top().middleCols(factor.off_u_pred, len_u);
  p.g_w = factor.m_top().middleCols(factor.off_w_pred, len_w);
  return p;
}

}  // namespace rdpc
