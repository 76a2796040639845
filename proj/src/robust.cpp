#include "rdpc/robust.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "rdpc/errors.hpp"

namespace rdpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// replicate a per-step box over the horizon when given in single-step form
Box expand_box(const Box& box, Eigen::Index per_step, Eigen::Index n_h, const char* what) {
  if (box.dim() == per_step * n_h) return box;
  if (box.dim() != per_step) {
    std::ostringstream msg;
    msg << what << ": box has dimension " << box.dim() << ", expected " << per_step << " or "
        << per_step * n_h;
    throw DimensionError(msg.str());
  }
  Eigen::VectorXd lo(per_step * n_h), hi(per_step * n_h);
  for (Eigen::Index i = 0; i < n_h; ++i) {
    lo.segment(i * per_step, per_step) = box.lo;
    hi.segment(i * per_step, per_step) = box.hi;
  }
  return Box(std::move(lo), std::move(hi));
}

std::string row_tag(const char* sig, Eigen::Index step, Eigen::Index ch) {
  std::ostringstream s;
  s << sig << '[' << step << ',' << ch << ']';
  return s.str();
}

}  // namespace

BoolMatrix causality_mask(Eigen::Index n_h, Eigen::Index n_u, Eigen::Index n_w_aug) {
  if (n_h < 1 || n_u < 1 || n_w_aug < 1)
    throw DimensionError("causality_mask: dimensions must be positive");
  BoolMatrix mask = BoolMatrix::Constant(n_h * n_u, n_h * n_w_aug, false);
  for (Eigen::Index i = 1; i < n_h; ++i)
    mask.block(i * n_u, 0, n_u, i * n_w_aug).setConstant(true);
  return mask;
}

void AffineExpr::validate() const {
  const Eigen::Index r = rows();
  if (coeff_dec.rows() != r || coeff_unc.rows() != r)
    throw DimensionError("affine expr: coefficient row count mismatch");
  for (const auto& t : bilinear) {
    if (t.row < 0 || t.row >= r || t.dec < 0 || t.dec >= n_dec() || t.unc < 0 ||
        t.unc >= n_unc())
      throw DimensionError("affine expr: bilinear term index out of range");
  }
}

Eigen::VectorXd AffineExpr::evaluate(const Eigen::VectorXd& z, const Eigen::VectorXd& w) const {
  validate();
  if (z.size() != n_dec() || w.size() != n_unc())
    throw DimensionError("affine expr: evaluation point size mismatch");
  Eigen::VectorXd value = constant + coeff_dec * z + coeff_unc * w;
  for (const auto& t : bilinear) value[t.row] += t.weight * z[t.dec] * w[t.unc];
  return value;
}

QpBuilder::QpBuilder(Eigen::Index n_vars) : n_vars_(n_vars) {
  if (n_vars < 1) throw DimensionError("qp builder: need at least one variable");
}

Eigen::Index QpBuilder::add_variable() { return n_vars_++; }

Eigen::Index QpBuilder::add_ineq(Terms terms, double rhs, std::string label) {
  for (const auto& [idx, coef] : terms) {
    (void)coef;
    if (idx < 0 || idx >= n_vars_) throw DimensionError("qp builder: row references unknown variable");
  }
  ineq_.push_back({std::move(terms), rhs, std::move(label)});
  return static_cast<Eigen::Index>(ineq_.size()) - 1;
}

Eigen::Index QpBuilder::add_eq(Terms terms, double rhs, std::string label) {
  for (const auto& [idx, coef] : terms) {
    (void)coef;
    if (idx < 0 || idx >= n_vars_) throw DimensionError("qp builder: row references unknown variable");
  }
  eq_.push_back({std::move(terms), rhs, std::move(label)});
  return static_cast<Eigen::Index>(eq_.size()) - 1;
}

QpProblem QpBuilder::finish() const {
  QpProblem qp;
  const Eigen::Index n = n_vars_;
  qp.p = Eigen::MatrixXd::Zero(n, n);
  qp.q = Eigen::VectorXd::Zero(n);
  qp.a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ineq_.size()), n);
  qp.b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ineq_.size()));
  qp.e = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(eq_.size()), n);
  qp.f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(eq_.size()));
  for (size_t i = 0; i < ineq_.size(); ++i) {
    for (const auto& [idx, coef] : ineq_[i].terms) qp.a(static_cast<Eigen::Index>(i), idx) += coef;
    qp.b[static_cast<Eigen::Index>(i)] = ineq_[i].rhs;
    qp.a_labels.push_back(ineq_[i].label);
  }
  for (size_t i = 0; i < eq_.size(); ++i) {
    for (const auto& [idx, coef] : eq_[i].terms) qp.e(static_cast<Eigen::Index>(i), idx) += coef;
    qp.f[static_cast<Eigen::Index>(i)] = eq_[i].rhs;
    qp.e_labels.push_back(eq_[i].label);
  }
  return qp;
}

namespace {

// worst case of sign*expr(row) over the box, one sense of a range constraint
Eigen::Index robustify_impl(QpBuilder& builder, const AffineExpr& expr, Eigen::Index row,
                            double sign, const Box& box, double upper_bound,
                            const std::string& label,
                            std::map<Eigen::Index, Eigen::Index>* shared_aux) {
  expr.validate();
  if (row < 0 || row >= expr.rows()) throw DimensionError("robustify_row: row out of range");
  if (box.dim() != expr.n_unc())
    throw DimensionError("robustify_row: box dimension does not match the uncertainty");
  if (!std::isfinite(upper_bound)) throw ConfigError("robustify_row: bound must be finite");
  const Eigen::VectorXd c = box.center();
  const Eigen::VectorXd rad = box.halfwidth();
  if (box.dim() > 0 && (!c.allFinite() || !rad.allFinite()))
    throw ConfigError("robustify_row: uncertainty box must be bounded");

  // coefficient of each uncertainty coordinate: a_q(z) = a0_q + sum_k w_k z_k
  std::map<Eigen::Index, QpBuilder::Terms> dep;
  for (const auto& t : expr.bilinear)
    if (t.row == row && t.weight != 0.0) dep[t.unc].push_back({t.dec, sign * t.weight});

  std::map<Eigen::Index, double> coef;
  for (Eigen::Index j = 0; j < expr.n_dec(); ++j)
    if (expr.coeff_dec(row, j) != 0.0) coef[j] += sign * expr.coeff_dec(row, j);

  double rhs = upper_bound - sign * expr.constant[row];
  QpBuilder::Terms aux_terms;
  for (Eigen::Index q = 0; q < expr.n_unc(); ++q) {
    const double a0 = sign * expr.coeff_unc(row, q);
    auto it = dep.find(q);
    if (it == dep.end()) {
      rhs -= a0 * c[q] + std::abs(a0) * rad[q];
      continue;
    }
    // affine-in-z coefficient: center part folds into the main row
    rhs -= a0 * c[q];
    for (const auto& [zk, wgt] : it->second) coef[zk] += wgt * c[q];
    if (rad[q] <= 0.0) continue;

    Eigen::Index t_var = -1;
    if (shared_aux) {
      auto found = shared_aux->find(q);
      if (found != shared_aux->end()) t_var = found->second;
    }
    if (t_var < 0) {
      t_var = builder.add_variable();
      if (shared_aux) (*shared_aux)[q] = t_var;
      // t_q >= |a_q(z)| via two half-space rows; |.| is sign-invariant so the
      // same t serves both senses of the range
      QpBuilder::Terms up, dn;
      for (const auto& [zk, wgt] : it->second) {
        up.push_back({zk, wgt});
        dn.push_back({zk, -wgt});
      }
      up.push_back({t_var, -1.0});
      dn.push_back({t_var, -1.0});
      std::ostringstream tag;
      tag << label << "#abs" << q;
      builder.add_ineq(std::move(up), -a0, tag.str() + "+");
      builder.add_ineq(std::move(dn), a0, tag.str() + "-");
    }
    aux_terms.push_back({t_var, rad[q]});
  }

  QpBuilder::Terms main(coef.begin(), coef.end());
  main.insert(main.end(), aux_terms.begin(), aux_terms.end());
  return builder.add_ineq(std::move(main), rhs, label);
}

}  // namespace

Eigen::Index robustify_row(QpBuilder& builder, const AffineExpr& expr, Eigen::Index row,
                           const Box& box, double upper_bound, const std::string& label,
                           std::map<Eigen::Index, Eigen::Index>* shared_aux) {
  return robustify_impl(builder, expr, row, 1.0, box, upper_bound, label, shared_aux);
}

void robustify_range(QpBuilder& builder, const AffineExpr& expr, Eigen::Index row, const Box& box,
                     double lo, double hi, const std::string& label) {
  if (lo > hi) throw ConfigError("robustify_range: lower bound exceeds upper bound");
  std::map<Eigen::Index, Eigen::Index> shared;
  if (hi < kInf) robustify_impl(builder, expr, row, 1.0, box, hi, label + "_hi", &shared);
  if (lo > -kInf) robustify_impl(builder, expr, row, -1.0, box, -lo, label + "_lo", &shared);
}

Box Forecast::total(Eigen::Index n_h) const {
  const Eigen::Index nw_tot = w_bar.size();
  if (nw_tot == 0) {
    if (deviation.dim() != 0)
      throw DimensionError("forecast: deviation without nominal trajectory");
    return Box();
  }
  if (nw_tot % n_h != 0) throw DimensionError("forecast: nominal length not divisible by horizon");
  Box dev = expand_box(deviation, nw_tot / n_h, n_h, "forecast deviation");
  return Box(dev.lo + w_bar, dev.hi + w_bar);
}

AssembledProblem assemble_affine_control(const Eigen::VectorXd& t0, const Eigen::MatrixXd& tu,
                                         const Eigen::MatrixXd& tw, Eigen::Index n_h,
                                         Eigen::Index n_u, Eigen::Index n_w, Eigen::Index n_y,
                                         const Forecast& forecast, const ConstraintSets& sets,
                                         const ObjectiveSpec& objective) {
  const Eigen::Index nu_tot = n_h * n_u, nw_tot = n_h * n_w, ny_tot = n_h * n_y;
  if (t0.size() != ny_tot || tu.rows() != ny_tot || tu.cols() != nu_tot ||
      tw.rows() != ny_tot || tw.cols() != nw_tot)
    throw DimensionError("assemble_affine_control: output map dimensions inconsistent");
  if (forecast.w_bar.size() != nw_tot)
    throw DimensionError("assemble_problem: forecast length must be n_h * n_w");
  if (objective.y_weight < 0.0 || objective.u_weight < 0.0)
    throw ConfigError("assemble_problem: objective weights must be nonnegative");

  const Box wbox = forecast.total(n_h);
  const Eigen::VectorXd w_center =
      nw_tot > 0 ? Eigen::VectorXd(wbox.center()) : Eigen::VectorXd(0);
  const Box ubox = expand_box(sets.u_set, n_u, n_h, "input set");
  const Box ybox = expand_box(sets.y_set, n_y, n_h, "output set");

  AssembledProblem out;
  out.n_h = n_h;
  out.n_u = n_u;
  out.n_w = n_w;
  out.n_y = n_y;
  out.w_center = w_center;
  out.objective_kind = objective.kind;

  // decision layout: [u_nominal | free gain entries | aux introduced later]
  out.k_index = Eigen::MatrixXi::Constant(nu_tot, nw_tot, -1);
  Eigen::Index nk = 0;
  if (objective.feedback && nw_tot > 0) {
    const BoolMatrix mask = causality_mask(n_h, n_u, n_w);
    for (Eigen::Index p = 0; p < nu_tot; ++p)
      for (Eigen::Index q = 0; q < nw_tot; ++q)
        if (mask(p, q)) out.k_index(p, q) = nu_tot + nk++;
  }
  const Eigen::Index nz0 = nu_tot + nk;
  QpBuilder builder(nz0);

  // input over the horizon: u(z, w) = u_nominal + K (w - w_center)
  AffineExpr u_expr;
  u_expr.constant = Eigen::VectorXd::Zero(nu_tot);
  u_expr.coeff_dec = Eigen::MatrixXd::Zero(nu_tot, nz0);
  u_expr.coeff_unc = Eigen::MatrixXd::Zero(nu_tot, nw_tot);
  for (Eigen::Index p = 0; p < nu_tot; ++p) {
    u_expr.coeff_dec(p, p) = 1.0;
    for (Eigen::Index q = 0; q < nw_tot; ++q) {
      const Eigen::Index kv = out.k_index(p, q);
      if (kv < 0) continue;
      u_expr.coeff_dec(p, kv) = -w_center[q];
      u_expr.bilinear.push_back({kv, q, p, 1.0});
    }
  }

  // predicted output after substituting the feedback law
  AffineExpr y_expr;
  y_expr.constant = t0;
  y_expr.coeff_dec = Eigen::MatrixXd::Zero(ny_tot, nz0);
  y_expr.coeff_dec.leftCols(nu_tot) = tu;
  y_expr.coeff_unc = tw;
  for (Eigen::Index p = 0; p < nu_tot; ++p)
    for (Eigen::Index q = 0; q < nw_tot; ++q) {
      const Eigen::Index kv = out.k_index(p, q);
      if (kv < 0) continue;
      for (Eigen::Index r = 0; r < ny_tot; ++r) {
        if (tu(r, p) == 0.0) continue;
        y_expr.coeff_dec(r, kv) -= tu(r, p) * w_center[q];
        y_expr.bilinear.push_back({kv, q, r, tu(r, p)});
      }
    }

  for (Eigen::Index p = 0; p < nu_tot; ++p)
    robustify_range(builder, u_expr, p, wbox, ubox.lo[p], ubox.hi[p],
                    row_tag("u", p / n_u, p % n_u));
  for (Eigen::Index r = 0; r < ny_tot; ++r)
    robustify_range(builder, y_expr, r, wbox, ybox.lo[r], ybox.hi[r],
                    row_tag("y", r / n_y, r % n_y));

  // nominal output at the box center; the feedback term vanishes there
  out.y_from_u = tu;
  out.y_const = t0 + tw * w_center;

  if (objective.kind == ObjectiveSpec::Kind::input_l1) {
    for (Eigen::Index i = 0; i < nu_tot; ++i) {
      const Eigen::Index s = builder.add_variable();
      builder.add_ineq({{i, 1.0}, {s, -1.0}}, 0.0, row_tag("l1", i / n_u, i % n_u) + "+");
      builder.add_ineq({{i, -1.0}, {s, -1.0}}, 0.0, row_tag("l1", i / n_u, i % n_u) + "-");
    }
    out.qp = builder.finish();
    for (Eigen::Index i = 0; i < nu_tot; ++i) out.qp.q[out.qp.n() - nu_tot + i] = 1.0;
    out.objective_constant = 0.0;
    return out;
  }

  Eigen::VectorXd y_ref = objective.y_ref;
  if (y_ref.size() == n_y) {
    y_ref = Eigen::VectorXd(ny_tot);
    for (Eigen::Index i = 0; i < n_h; ++i) y_ref.segment(i * n_y, n_y) = objective.y_ref;
  }
  if (y_ref.size() != ny_tot)
    throw DimensionError("assemble_problem: reference must have n_y or n_h*n_y entries");

  out.qp = builder.finish();
  const Eigen::VectorXd mismatch = out.y_const - y_ref;
  out.qp.p.topLeftCorner(nu_tot, nu_tot) = 2.0 * objective.y_weight * tu.transpose() * tu;
  out.qp.p.topLeftCorner(nu_tot, nu_tot).diagonal().array() += 2.0 * objective.u_weight;
  out.qp.q.head(nu_tot) = 2.0 * objective.y_weight * tu.transpose() * mismatch;
  out.objective_constant = objective.y_weight * mismatch.squaredNorm();
  return out;
}

AssembledProblem assemble_problem(const KktFactor& factor, const HankelStack& stack,
                                  const ControlHistory& history, const Forecast& forecast,
                                  const ConstraintSets& sets, const ObjectiveSpec& objective) {
  const AffinePredictor pred =
      affine_predictor(factor, history.y_init, history.u_init, history.w_init);
  const Eigen::MatrixXd tu = stack.y_pred * pred.g_u;
  const Eigen::MatrixXd tw = stack.y_pred * pred.g_w;
  const Eigen::VectorXd t0 = stack.y_pred * pred.g0;
  return assemble_affine_control(t0, tu, tw, stack.n_h, stack.n_u, stack.n_w, stack.n_y,
                                 forecast, sets, objective);
}

namespace {

std::string violated_row_label(const QpProblem& qp, Eigen::Index stacked_row) {
  if (stacked_row < 0) return "(none)";
  if (stacked_row < qp.n_eq())
    return qp.e_labels.empty() ? "eq row " + std::to_string(stacked_row)
                               : qp.e_labels[static_cast<size_t>(stacked_row)];
  const Eigen::Index i = stacked_row - qp.n_eq();
  return qp.a_labels.empty() ? "ineq row " + std::to_string(i)
                             : qp.a_labels[static_cast<size_t>(i)];
}

}  // namespace

void throw_if_not_optimal(const QpProblem& qp, const QpResult& res) {
  const std::string worst = violated_row_label(qp, res.most_violated_row);
  if (res.status == QpStatus::primal_infeasible ||
      (res.status == QpStatus::max_iterations && res.max_violation > 1e-4)) {
    std::ostringstream msg;
    msg << "control problem infeasible: worst row '" << worst << "' violated by "
        << res.max_violation;
    throw InfeasibleError(msg.str(), worst, res.max_violation);
  }
  if (res.status == QpStatus::dual_infeasible)
    throw SolveError("control problem is unbounded below");
  if (res.status == QpStatus::max_iterations) {
    std::ostringstream msg;
    msg << "qp backend stopped at the iteration limit (primal residual " << res.primal_residual
        << ", dual residual " << res.dual_residual << ")";
    throw SolveError(msg.str());
  }
}

ControlSolution solve_assembled(const AssembledProblem& assembled, const QpSettings& qp_settings) {
  const QpResult res = solve_qp(assembled.qp, qp_settings);
  throw_if_not_optimal(assembled.qp, res);

  const Eigen::Index nu_tot = assembled.n_h * assembled.n_u;
  const Eigen::Index nw_tot = assembled.n_h * assembled.n_w;
  ControlSolution sol;
  sol.u_nominal = res.z.head(nu_tot);
  sol.k_gain = Eigen::MatrixXd::Zero(nu_tot, nw_tot);
  for (Eigen::Index p = 0; p < nu_tot; ++p)
    for (Eigen::Index q = 0; q < nw_tot; ++q)
      if (assembled.k_index(p, q) >= 0) sol.k_gain(p, q) = res.z[assembled.k_index(p, q)];
  sol.w_center = assembled.w_center;
  sol.y_nominal = assembled.y_const + assembled.y_from_u * sol.u_nominal;
  sol.objective_value = res.objective + assembled.objective_constant;
  sol.qp_iterations = res.iterations;
  return sol;
}

ControlSolution solve_control(const KktFactor& factor, const HankelStack& stack,
                              const ControlHistory& history, const Forecast& forecast,
                              const ConstraintSets& sets, const ObjectiveSpec& objective,
                              const QpSettings& qp_settings) {
  return solve_assembled(assemble_problem(factor, stack, history, forecast, sets, objective),
                         qp_settings);
}

}  // namespace rdpc
