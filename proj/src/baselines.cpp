#include "rdpc/baselines.hpp"

#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "rdpc/errors.hpp"

namespace rdpc {

namespace {

std::string row_tag(const char* kind, Eigen::Index step, Eigen::Index channel) {
  return std::string(kind) + "[" + std::to_string(step) + "," + std::to_string(channel) + "]";
}

// box with n entries or an identical per-step block repeated n_h times
void append_box_rows(QpBuilder& builder, const Box& box, Eigen::Index var0, Eigen::Index n,
                     Eigen::Index per_step, const char* kind) {
  if (box.dim() != n && box.dim() != per_step)
    throw DimensionError("single_level_deepc: set dimension mismatch");
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index b = box.dim() == n ? i : i % per_step;
    const std::string tag = row_tag(kind, i / per_step, i % per_step);
    if (std::isfinite(box.lo[b]) && box.lo[b] == box.hi[b]) {
      builder.add_eq({{var0 + i, 1.0}}, box.hi[b], tag + "_eq");
      continue;
    }
    if (std::isfinite(box.hi[b])) builder.add_ineq({{var0 + i, 1.0}}, box.hi[b], tag + "_hi");
    if (std::isfinite(box.lo[b])) builder.add_ineq({{var0 + i, -1.0}}, -box.lo[b], tag + "_lo");
  }
}

void add_hankel_eq(QpBuilder& builder, const Eigen::MatrixXd& block, Eigen::Index g0,
                   Eigen::Index coupled_var, double coupled_coef, const Eigen::VectorXd& rhs,
                   const char* kind, Eigen::Index per_step) {
  for (Eigen::Index r = 0; r < block.rows(); ++r) {
    QpBuilder::Terms terms;
    for (Eigen::Index c = 0; c < block.cols(); ++c)
      if (block(r, c) != 0.0) terms.push_back({g0 + c, block(r, c)});
    if (coupled_var >= 0) terms.push_back({coupled_var + r, coupled_coef});
    builder.add_eq(terms, rhs.size() > 0 ? rhs[r] : 0.0,
                   row_tag(kind, r / per_step, r % per_step));
  }
}

}  // namespace

SingleLevelSolution single_level_deepc(const HankelStack& stack, const ControlHistory& history,
                                       const ConstraintSets& sets, double eta_g,
                                       double eta_sigma, const ObjectiveSpec& objective,
                                       const Eigen::VectorXd& w_bar,
                                       const QpSettings& qp_settings) {
  if (eta_g < 0.0 || eta_sigma < 0.0)
    throw ConfigError("single_level_deepc: regularizer weights must be nonnegative");
  const Eigen::Index n_h = stack.n_h, n_u = stack.n_u, n_w = stack.n_w, n_y = stack.n_y;
  const Eigen::Index t_init = stack.t_init, n_c = stack.n_c;
  const Eigen::Index nu_tot = n_h * n_u, ny_tot = n_h * n_y, ns = t_init * n_y;
  if (history.y_init.size() != t_init * n_y || history.u_init.size() != t_init * n_u ||
      history.w_init.size() != t_init * n_w)
    throw DimensionError("single_level_deepc: history does not match the stack");
  Eigen::VectorXd wb = w_bar;
  if (wb.size() == 0) wb = Eigen::VectorXd::Zero(n_h * n_w);
  if (wb.size() != n_h * n_w)
    throw DimensionError("single_level_deepc: w_bar must have n_h * n_w entries");

  // decision layout: [u_pred | y_pred | g | sigma]
  const Eigen::Index u0 = 0, y0 = nu_tot, g0 = nu_tot + ny_tot, s0 = g0 + n_c;
  QpBuilder builder(s0 + ns);

  add_hankel_eq(builder, stack.y_init, g0, s0, -1.0, history.y_init, "fit:y_init", n_y);
  add_hankel_eq(builder, stack.u_init, g0, -1, 0.0, history.u_init, "fit:u_init", n_u);
  if (n_w > 0) {
    add_hankel_eq(builder, stack.w_init, g0, -1, 0.0, history.w_init, "fit:w_init", n_w);
    add_hankel_eq(builder, stack.w_pred, g0, -1, 0.0, wb, "fit:w_pred", n_w);
  }
  add_hankel_eq(builder, stack.u_pred, g0, u0, -1.0, Eigen::VectorXd::Zero(nu_tot),
                "fit:u_pred", n_u);
  add_hankel_eq(builder, stack.y_pred, g0, y0, -1.0, Eigen::VectorXd::Zero(ny_tot),
                "fit:y_pred", n_y);

  append_box_rows(builder, sets.u_set, u0, nu_tot, n_u, "u");
  append_box_rows(builder, sets.y_set, y0, ny_tot, n_y, "y");

  if (objective.kind == ObjectiveSpec::Kind::input_l1) {
    for (Eigen::Index i = 0; i < nu_tot; ++i) {
      const Eigen::Index s = builder.add_variable();
      builder.add_ineq({{u0 + i, 1.0}, {s, -1.0}}, 0.0, row_tag("l1", i / n_u, i % n_u) + "+");
      builder.add_ineq({{u0 + i, -1.0}, {s, -1.0}}, 0.0, row_tag("l1", i / n_u, i % n_u) + "-");
    }
  }

  QpProblem qp = builder.finish();
  double constant = 0.0;
  if (objective.kind == ObjectiveSpec::Kind::input_l1) {
    for (Eigen::Index i = 0; i < nu_tot; ++i) qp.q[qp.n() - nu_tot + i] = 1.0;
  } else {
    Eigen::VectorXd y_ref = objective.y_ref;
    if (y_ref.size() == n_y) {
      y_ref = Eigen::VectorXd(ny_tot);
      for (Eigen::Index i = 0; i < n_h; ++i) y_ref.segment(i * n_y, n_y) = objective.y_ref;
    }
    if (y_ref.size() != ny_tot)
      throw DimensionError("single_level_deepc: reference must have n_y or n_h*n_y entries");
    if (objective.y_weight < 0.0 || objective.u_weight < 0.0)
      throw ConfigError("single_level_deepc: objective weights must be nonnegative");
    qp.p.diagonal().segment(u0, nu_tot).array() += 2.0 * objective.u_weight;
    qp.p.diagonal().segment(y0, ny_tot).array() += 2.0 * objective.y_weight;
    qp.q.segment(y0, ny_tot) = -2.0 * objective.y_weight * y_ref;
    constant = objective.y_weight * y_ref.squaredNorm();
  }
  qp.p.diagonal().segment(g0, n_c).array() += 2.0 * eta_g;
  qp.p.diagonal().segment(s0, ns).array() += 2.0 * eta_sigma;

  const QpResult res = solve_qp(qp, qp_settings);
  throw_if_not_optimal(qp, res);

  SingleLevelSolution sol;
  sol.u_pred = res.z.segment(u0, nu_tot);
  sol.y_pred = res.z.segment(y0, ny_tot);
  sol.g = res.z.segment(g0, n_c);
  sol.sigma = res.z.segment(s0, ns);
  sol.objective_value = res.objective + constant;
  sol.qp_iterations = res.iterations;
  return sol;
}

ControlSolution non_robust_control(const KktFactor& factor, const HankelStack& stack,
                                   const ControlHistory& history, const Eigen::VectorXd& w_bar,
                                   const ConstraintSets& sets, const ObjectiveSpec& objective,
                                   const QpSettings& qp_settings) {
  Forecast point;
  point.w_bar = w_bar;
  point.deviation = Box::centered(Eigen::VectorXd::Zero(stack.n_w),
                                  Eigen::VectorXd::Zero(stack.n_w));
  ObjectiveSpec certainty = objective;
  certainty.feedback = false;
  return solve_control(factor, stack, history, point, sets, certainty, qp_settings);
}

void ArxModel::validate() const {
  if (theta_y.empty()) throw DimensionError("ArxModel: order must be at least 1");
  if (theta_u.size() != theta_y.size() || theta_w.size() != theta_y.size())
    throw DimensionError("ArxModel: lag counts differ between channels");
  const Eigen::Index ny = n_y();
  if (ny < 1) throw DimensionError("ArxModel: output dimension must be positive");
  for (const auto& m : theta_y)
    if (m.rows() != ny || m.cols() != ny) throw DimensionError("ArxModel: bad theta_y block");
  for (const auto& m : theta_u)
    if (m.rows() != ny || m.cols() != n_u()) throw DimensionError("ArxModel: bad theta_u block");
  for (const auto& m : theta_w)
    if (m.rows() != ny || m.cols() != n_w()) throw DimensionError("ArxModel: bad theta_w block");
}

ArxModel ArxModel::zeros(Eigen::Index order, Eigen::Index n_y, Eigen::Index n_u,
                         Eigen::Index n_w) {
  if (order < 1) throw DimensionError("ArxModel: order must be at least 1");
  ArxModel m;
  m.theta_y.assign(order, Eigen::MatrixXd::Zero(n_y, n_y));
  m.theta_u.assign(order, Eigen::MatrixXd::Zero(n_y, n_u));
  m.theta_w.assign(order, Eigen::MatrixXd::Zero(n_y, n_w));
  m.validate();
  return m;
}

namespace {

Eigen::Index history_steps(const ArxModel& model, const ControlHistory& history) {
  const Eigen::Index ny = model.n_y(), nu = model.n_u(), nw = model.n_w();
  if (history.y_init.size() % ny != 0) throw DimensionError("arx: y history not step aligned");
  const Eigen::Index steps = history.y_init.size() / ny;
  if (history.u_init.size() != steps * nu || history.w_init.size() != steps * nw)
    throw DimensionError("arx: history channels disagree on the step count");
  if (steps < model.order()) throw DimensionError("arx: history shorter than the model order");
  return steps;
}

}  // namespace

ArxAffineMap arx_affine_rollout(const ArxModel& model, const ControlHistory& history,
                                Eigen::Index n_h) {
  model.validate();
  if (n_h < 1) throw DimensionError("arx_affine_rollout: horizon must be positive");
  const Eigen::Index ny = model.n_y(), nu = model.n_u(), nw = model.n_w();
  const Eigen::Index order = model.order();
  const Eigen::Index steps = history_steps(model, history);

  ArxAffineMap map;
  map.t0 = Eigen::VectorXd::Zero(n_h * ny);
  map.tu = Eigen::MatrixXd::Zero(n_h * ny, n_h * nu);
  map.tw = Eigen::MatrixXd::Zero(n_h * ny, n_h * nw);
  for (Eigen::Index i = 0; i < n_h; ++i) {
    auto c_i = map.t0.segment(i * ny, ny);
    auto du_i = map.tu.middleRows(i * ny, ny);
    auto dw_i = map.tw.middleRows(i * ny, ny);
    for (Eigen::Index j = 1; j <= order; ++j) {
      const Eigen::Index idx = i - j;  // horizon step, negative = history
      if (idx >= 0) {
        c_i += model.theta_y[j - 1] * map.t0.segment(idx * ny, ny);
        du_i += model.theta_y[j - 1] * map.tu.middleRows(idx * ny, ny);
        dw_i += model.theta_y[j - 1] * map.tw.middleRows(idx * ny, ny);
        du_i.middleCols(idx * nu, nu) += model.theta_u[j - 1];
        if (nw > 0) dw_i.middleCols(idx * nw, nw) += model.theta_w[j - 1];
      } else {
        const Eigen::Index h = steps + idx;  // history step, oldest first
        c_i += model.theta_y[j - 1] * history.y_init.segment(h * ny, ny);
        c_i += model.theta_u[j - 1] * history.u_init.segment(h * nu, nu);
        if (nw > 0) c_i += model.theta_w[j - 1] * history.w_init.segment(h * nw, nw);
      }
    }
  }
  return map;
}

void RlsState::validate() const {
  const Eigen::Index p = order * (n_y + n_u + n_w);
  if (order < 1 || n_y < 1) throw DimensionError("RlsState: bad dimensions");
  if (theta.rows() != p || theta.cols() != n_y)
    throw DimensionError("RlsState: parameter shape mismatch");
  if (p_cov.rows() != p || p_cov.cols() != p)
    throw DimensionError("RlsState: covariance shape mismatch");
  if (!(lambda > 0.0) || lambda > 1.0)
    throw ConfigError("RlsState: forgetting factor must lie in (0, 1]");
  if ((p_cov - p_cov.transpose()).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + p_cov.cwiseAbs().maxCoeff()))
    throw FactorizationError("RlsState: covariance is not symmetric");
  if (Eigen::LLT<Eigen::MatrixXd>(p_cov).info() != Eigen::Success)
    throw FactorizationError("RlsState: covariance is not positive definite; reset required");
}

ArxModel RlsState::model() const {
  ArxModel m;
  Eigen::Index at = 0;
  for (Eigen::Index j = 0; j < order; ++j)
    m.theta_y.push_back(theta.middleRows(j * n_y, n_y).transpose());
  at = order * n_y;
  for (Eigen::Index j = 0; j < order; ++j)
    m.theta_u.push_back(theta.middleRows(at + j * n_u, n_u).transpose());
  at += order * n_u;
  for (Eigen::Index j = 0; j < order; ++j)
    m.theta_w.push_back(theta.middleRows(at + j * n_w, n_w).transpose());
  m.validate();
  return m;
}

RlsState RlsState::from_model(const ArxModel& model, const Eigen::MatrixXd& p_cov,
                              double lambda) {
  model.validate();
  RlsState s;
  s.order = model.order();
  s.n_y = model.n_y();
  s.n_u = model.n_u();
  s.n_w = model.n_w();
  s.lambda = lambda;
  const Eigen::Index p = s.order * (s.n_y + s.n_u + s.n_w);
  s.theta.resize(p, s.n_y);
  Eigen::Index at = 0;
  for (Eigen::Index j = 0; j < s.order; ++j)
    s.theta.middleRows(j * s.n_y, s.n_y) = model.theta_y[j].transpose();
  at = s.order * s.n_y;
  for (Eigen::Index j = 0; j < s.order; ++j)
    s.theta.middleRows(at + j * s.n_u, s.n_u) = model.theta_u[j].transpose();
  at += s.order * s.n_u;
  for (Eigen::Index j = 0; j < s.order; ++j)
    s.theta.middleRows(at + j * s.n_w, s.n_w) = model.theta_w[j].transpose();
  s.p_cov = p_cov;
  s.validate();
  return s;
}

Eigen::VectorXd arx_regressor(const ArxModel& model, const ControlHistory& history) {
  model.validate();
  const Eigen::Index ny = model.n_y(), nu = model.n_u(), nw = model.n_w();
  const Eigen::Index order = model.order();
  const Eigen::Index steps = history_steps(model, history);
  Eigen::VectorXd phi(order * (ny + nu + nw));
  Eigen::Index at = 0;
  for (Eigen::Index j = 1; j <= order; ++j, at += ny)
    phi.segment(at, ny) = history.y_init.segment((steps - j) * ny, ny);
  for (Eigen::Index j = 1; j <= order; ++j, at += nu)
    phi.segment(at, nu) = history.u_init.segment((steps - j) * nu, nu);
  for (Eigen::Index j = 1; j <= order; ++j, at += nw)
    phi.segment(at, nw) = history.w_init.segment((steps - j) * nw, nw);
  return phi;
}

RlsState rls_init(const Dataset& data, Eigen::Index order, double lambda, double p0_scale) {
  if (order < 1) throw DimensionError("rls_init: order must be at least 1");
  if (data.size() <= order) throw DimensionError("rls_init: dataset shorter than the order");
  if (p0_scale <= 0.0) throw ConfigError("rls_init: covariance scale must be positive");
  const Eigen::Index ny = data.n_y(), nu = data.n_u(), nw = data.n_w();
  const Eigen::Index p = order * (ny + nu + nw);
  const Eigen::Index rows = data.size() - order;
  Eigen::MatrixXd phi(rows, p);
  Eigen::MatrixXd targets(rows, ny);
  for (Eigen::Index i = 0; i < rows; ++i) {
    Eigen::Index at = 0;
    for (Eigen::Index j = 1; j <= order; ++j, at += ny)
      phi.row(i).segment(at, ny) = data.y_at(order + i - j).transpose();
    for (Eigen::Index j = 1; j <= order; ++j, at += nu)
      phi.row(i).segment(at, nu) = data.u_at(order + i - j).transpose();
    for (Eigen::Index j = 1; j <= order; ++j, at += nw)
      phi.row(i).segment(at, nw) = data.w_at(order + i - j).transpose();
    targets.row(i) = data.y_at(order + i).transpose();
  }

  RlsState s;
  s.order = order;
  s.n_y = ny;
  s.n_u = nu;
  s.n_w = nw;
  s.lambda = lambda;
  s.theta = phi.colPivHouseholderQr().solve(targets);
  s.p_cov = p0_scale * Eigen::MatrixXd::Identity(p, p);
  s.validate();
  return s;
}

RlsState rls_update(const RlsState& state, const Eigen::VectorXd& regressor,
                    const Eigen::VectorXd& y_measured) {
  state.validate();
  if (regressor.size() != state.theta.rows())
    throw DimensionError("rls_update: regressor length mismatch");
  if (y_measured.size() != state.n_y)
    throw DimensionError("rls_update: measurement length mismatch");

  RlsState next = state;
  const Eigen::VectorXd pphi = state.p_cov * regressor;
  const double denom = state.lambda + regressor.dot(pphi);
  const Eigen::VectorXd gain = pphi / denom;
  const Eigen::RowVectorXd innovation = y_measured.transpose() - regressor.transpose() * state.theta;
  next.theta += gain * innovation;
  next.p_cov = (state.p_cov - gain * pphi.transpose()) / state.lambda;
  const Eigen::MatrixXd sym = 0.5 * (next.p_cov + next.p_cov.transpose());
  next.p_cov = sym;
  if (Eigen::LLT<Eigen::MatrixXd>(next.p_cov).info() != Eigen::Success)
    throw FactorizationError("rls_update: covariance lost positive definiteness; reset required");
  return next;
}

ControlSolution rls_robust_mpc(const ArxModel& model, const ControlHistory& history,
                               Eigen::Index n_h, const Forecast& forecast,
                               const ConstraintSets& sets, const ObjectiveSpec& objective,
                               const QpSettings& qp_settings) {
  const ArxAffineMap map = arx_affine_rollout(model, history, n_h);
  const AssembledProblem assembled =
      assemble_affine_control(map.t0, map.tu, map.tw, n_h, model.n_u(), model.n_w(),
                              model.n_y(), forecast, sets, objective);
  return solve_assembled(assembled, qp_settings);
}

}  // namespace rdpc
