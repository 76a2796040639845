#include "rdpc/excitation.hpp"

#include <cmath>
#include <sstream>

#include "rdpc/errors.hpp"
#include "rdpc/predictor.hpp"

namespace rdpc {

Box minkowski_diff_box(const Box& a, const Box& b) {
  if (a.dim() != b.dim()) throw DimensionError("minkowski_diff_box: dimension mismatch");
  Eigen::VectorXd lo = a.lo - b.lo;
  Eigen::VectorXd hi = a.hi - b.hi;
  if ((lo.array() > hi.array()).any())
    throw ConfigError("minkowski_diff_box: difference is empty (subtrahend too wide)");
  return Box(std::move(lo), std::move(hi));
}

Box augment_uncertainty(const Box& w_box, const Box& u_e_box) { return w_box.appended(u_e_box); }

Eigen::VectorXd augment_history(const Eigen::VectorXd& w_init, Eigen::Index t_init,
                                Eigen::Index n_u) {
  if (t_init < 1 || n_u < 1) throw DimensionError("augment_history: bad dimensions");
  if (w_init.size() % t_init != 0)
    throw DimensionError("augment_history: history length not divisible by t_init");
  const Eigen::Index n_w = w_init.size() / t_init;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(t_init * (n_w + n_u));
  for (Eigen::Index i = 0; i < t_init; ++i)
    out.segment(i * (n_w + n_u), n_w) = w_init.segment(i * n_w, n_w);
  return out;
}

HankelStack augmented_stack(const Dataset& data, Eigen::Index t_init, Eigen::Index n_h) {
  const Eigen::Index n_u = data.n_u(), n_w = data.n_w(), n_y = data.n_y();
  const Eigen::Index t = data.size();
  Dataset primary(n_u, n_w + n_u, n_y, t);
  Dataset mirrored(n_u, n_w + n_u, n_y, t);
  Eigen::VectorXd w_aug(n_w + n_u);
  for (Eigen::Index k = 0; k < t; ++k) {
    const Eigen::VectorXd u = data.u_at(k);
    const Eigen::VectorXd w = data.w_at(k);
    const Eigen::VectorXd y = data.y_at(k);
    w_aug.head(n_w) = w;
    w_aug.tail(n_u).setZero();
    primary.push(u, w_aug, y);
    w_aug.tail(n_u) = u;
    mirrored.push(Eigen::VectorXd::Zero(n_u), w_aug, y);
  }
  HankelStack a = build_stack(primary, t_init, n_h);
  const HankelStack b = build_stack(mirrored, t_init, n_h);

  auto hcat = [](Eigen::MatrixXd& left, const Eigen::MatrixXd& right) {
    const Eigen::Index cols = left.cols();
    left.conservativeResize(Eigen::NoChange, cols + right.cols());
    left.rightCols(right.cols()) = right;
  };
  hcat(a.y_init, b.y_init);
  hcat(a.u_init, b.u_init);
  hcat(a.w_init, b.w_init);
  hcat(a.u_pred, b.u_pred);
  hcat(a.w_pred, b.w_pred);
  hcat(a.y_pred, b.y_pred);
  a.n_c += b.n_c;
  return a;
}

void ExcitationConfig::validate(const Box& u_step_box) const {
  if (pe_tolerance < 0.0) throw ConfigError("excitation: pe_tolerance must be nonnegative");
  if (u_e_box.dim() != u_step_box.dim())
    throw DimensionError("excitation: excitation set dimension must match the input");
  if ((u_e_box.lo.array() < u_step_box.lo.array()).any() ||
      (u_e_box.hi.array() > u_step_box.hi.array()).any())
    throw ConfigError("excitation: excitation set must be contained in the input set");
  const Box tightened = minkowski_diff_box(u_step_box, u_e_box);
  if ((tightened.hi - tightened.lo).maxCoeff() <= 0.0)
    throw ConfigError("excitation: tightened input set collapses to a single point");
}

Eigen::VectorXd sample_excitation(const ExcitationConfig& cfg, Eigen::Index step) {
  Rng stream = Rng(cfg.rng_seed).substream(static_cast<std::uint64_t>(step));
  return stream.uniform_vector(cfg.u_e_box.lo, cfg.u_e_box.hi);
}

namespace {

// per-step input box, whether the configured set is per-step or horizon-long
Box step_input_box(const Box& u_set, Eigen::Index n_u, Eigen::Index n_h) {
  if (u_set.dim() == n_u) return u_set;
  if (u_set.dim() != n_u * n_h)
    throw DimensionError("excitation: input set must have n_u or n_h*n_u entries");
  Box first(u_set.lo.head(n_u), u_set.hi.head(n_u));
  for (Eigen::Index i = 1; i < n_h; ++i)
    if ((u_set.lo.segment(i * n_u, n_u) - first.lo).cwiseAbs().maxCoeff() > 0.0 ||
        (u_set.hi.segment(i * n_u, n_u) - first.hi).cwiseAbs().maxCoeff() > 0.0)
      throw ConfigError("excitation: per-step input bounds must be identical to tighten them");
  return first;
}

}  // namespace

ExcitationStepResult excitation_step(const Dataset& data, Eigen::Index t_init, Eigen::Index n_h,
                                     double e_g_value, const ControlHistory& history,
                                     const Forecast& forecast, const ConstraintSets& sets,
                                     const ObjectiveSpec& objective, const ExcitationConfig& cfg,
                                     Eigen::Index step, const QpSettings& qp_settings) {
  const Eigen::Index n_u = data.n_u(), n_w = data.n_w();
  const Box u_step = step_input_box(sets.u_set, n_u, n_h);
  cfg.validate(u_step);
  if (!u_step.hi.allFinite() || !u_step.lo.allFinite())
    throw ConfigError("excitation: input set must be bounded");

  ExcitationStepResult out;
  const HankelStack stack = build_stack(data, t_init, n_h);
  const KktFactor factor =
      factorize_kkt(stack, RegularizerWeights::constant(stack.n_c, e_g_value));
  out.solution = solve_control(factor, stack, history, forecast, sets, objective, qp_settings);

  const double tol = cfg.pe_tolerance * (u_step.hi - u_step.lo).maxCoeff();
  out.pe_flag = pe_heuristic(out.solution.u_nominal, tol);
  if (cfg.use_exact_rank) {
    // rank of the input Hankel after appending the planned moves
    Eigen::MatrixXd u_all(n_u, data.size() + n_h);
    u_all.leftCols(data.size()) = data.u_signal();
    for (Eigen::Index i = 0; i < n_h; ++i)
      u_all.col(data.size() + i) = out.solution.u_nominal.segment(i * n_u, n_u);
    out.pe_flag = !is_persistently_exciting(u_all, t_init + n_h);
  }

  if (!out.pe_flag) {
    out.excited = false;
    out.u_e = Eigen::VectorXd::Zero(n_u);
    out.u_applied = out.solution.u_nominal.head(n_u);
    return out;
  }

  // excited re-solve on the augmented system with the tightened input set
  const HankelStack aug = augmented_stack(data, t_init, n_h);
  const KktFactor aug_factor =
      factorize_kkt(aug, RegularizerWeights::constant(aug.n_c, e_g_value));

  ControlHistory aug_history = history;
  aug_history.w_init = augment_history(history.w_init, t_init, n_u);

  Forecast aug_forecast;
  aug_forecast.w_bar = Eigen::VectorXd::Zero(n_h * (n_w + n_u));
  const Box total = forecast.total(n_h);
  const Eigen::VectorXd dev_lo = total.lo - forecast.w_bar;
  const Eigen::VectorXd dev_hi = total.hi - forecast.w_bar;
  Eigen::VectorXd lo(n_h * (n_w + n_u)), hi(n_h * (n_w + n_u));
  for (Eigen::Index i = 0; i < n_h; ++i) {
    aug_forecast.w_bar.segment(i * (n_w + n_u), n_w) = forecast.w_bar.segment(i * n_w, n_w);
    lo.segment(i * (n_w + n_u), n_w) = dev_lo.segment(i * n_w, n_w);
    hi.segment(i * (n_w + n_u), n_w) = dev_hi.segment(i * n_w, n_w);
    lo.segment(i * (n_w + n_u) + n_w, n_u) = cfg.u_e_box.lo;
    hi.segment(i * (n_w + n_u) + n_w, n_u) = cfg.u_e_box.hi;
  }
  aug_forecast.deviation = Box(std::move(lo), std::move(hi));

  ConstraintSets aug_sets = sets;
  aug_sets.u_set = minkowski_diff_box(u_step, cfg.u_e_box);

  out.solution = solve_control(aug_factor, aug, aug_history, aug_forecast, aug_sets, objective,
                               qp_settings);
  out.excited = true;
  out.u_e = sample_excitation(cfg, step);
  out.u_applied = out.solution.u_nominal.head(n_u) + out.u_e;
  return out;
}

}  // namespace rdpc
