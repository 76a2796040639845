#include "rdpc/sim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "rdpc/baselines.hpp"
#include "rdpc/errors.hpp"
#include "rdpc/predictor.hpp"

namespace rdpc {

Eigen::MatrixXd PlantModel::a_at(Eigen::Index i) const {
  if (drift_amplitude == 0.0) return a;
  const double shift =
      drift_amplitude * std::sin(static_cast<double>(i) * M_PI / drift_period);
  Eigen::MatrixXd out = a;
  out.diagonal().array() += shift;
  return out;
}

void PlantModel::validate() const {
  if (a.rows() < 1 || a.rows() != a.cols()) throw DimensionError("plant: A must be square");
  if (b.rows() != a.rows() || b.cols() < 1) throw DimensionError("plant: B row count mismatch");
  if (e.rows() != a.rows() || e.cols() < 1) throw DimensionError("plant: E row count mismatch");
  if (c.cols() != a.rows() || c.rows() < 1) throw DimensionError("plant: C column count mismatch");
  if (d.rows() != c.rows() || d.cols() != b.cols()) throw DimensionError("plant: D shape mismatch");
  if (drift_period <= 0.0) throw ConfigError("plant: drift period must be positive");
}

double spectral_radius(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols() || m.rows() < 1) throw DimensionError("spectral_radius: square matrix required");
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

namespace {

PlantModel second_order_plant_model() {
  PlantModel m;
  m.a.resize(2, 2);
  m.a << 0.9535, 0.0761, -0.8454, 0.5478;
  m.b.resize(2, 1);
  m.b << 0.0465, 0.8454;
  m.e = m.b;
  m.c.resize(1, 2);
  m.c << 1.0, 0.0;
  m.d = Eigen::MatrixXd::Zero(1, 1);
  return m;
}

// 4-zone RC thermal network: zone air nodes 0..3 (warehouse, two offices, the
// corridor connecting them), one capacitive core node per wall (9 walls).
// Each wall couples its two sides through a surface resistance; exterior
// walls face the outdoor temperature (disturbance channel 0) and solar
// radiation (channel 1) enters through the exterior rooms' glazing.  All
// parameters are first-principles construction constants, not fitted values.
PlantModel rc_multizone_plant_model() {
  constexpr int nz = 4, nwall = 9, nx = nz + nwall;
  const double dt = 900.0;          // 15 min sampling, s
  const double air_cap = 1200.0;    // J/(m^3 K), volumetric heat capacity of air
  const double furniture = 5.0;     // effective zone capacity multiplier
  const double ach = 0.3;           // infiltration, air changes per hour
  const double zone_volume[nz] = {800.0, 150.0, 150.0, 100.0};  // m^3

  // wall: (side a, side b) with -1 = outdoor; area m^2; film plus half the
  // construction resistance per side, K m^2 / W
  struct Wall {
    int side_a, side_b;
    double area, r_a, r_b;
  };
  const Wall walls[nwall] = {
      {0, -1, 120.0, 0.8, 1.2},  // exterior envelopes
      {1, -1, 40.0, 0.8, 1.2},
      {2, -1, 40.0, 0.8, 1.2},
      {3, -1, 25.0, 0.8, 1.2},
      {0, 3, 30.0, 0.35, 0.35},  // rooms onto the corridor
      {1, 3, 25.0, 0.35, 0.35},
      {2, 3, 25.0, 0.35, 0.35},
      {1, 2, 20.0, 0.35, 0.35},  // office partition
      {0, 1, 35.0, 0.35, 0.35},  // warehouse/office partition
  };
  const double wall_cap_per_area = 0.15 * 1.8e6;  // 15 cm of 1.8 MJ/(m^3 K) masonry

  // input 0 heats the warehouse, input 1 is the shared HVAC of the offices
  // and corridor; inputs are kW at the plant boundary, W internally
  const double heat_split[2][nz] = {{1.0, 0.0, 0.0, 0.0}, {0.0, 0.4, 0.4, 0.2}};
  // glazing area times transmittance, m^2
  const double aperture[nz] = {6.0 * 0.7, 3.0 * 0.7, 3.0 * 0.7, 0.0};

  Eigen::VectorXd cap(nx);
  for (int z = 0; z < nz; ++z) cap[z] = furniture * air_cap * zone_volume[z];
  for (int k = 0; k < nwall; ++k) cap[nz + k] = wall_cap_per_area * walls[k].area;

  Eigen::MatrixXd ac = Eigen::MatrixXd::Zero(nx, nx);
  Eigen::MatrixXd bc = Eigen::MatrixXd::Zero(nx, 2);
  Eigen::MatrixXd ec = Eigen::MatrixXd::Zero(nx, 2);
  // heat flow g*(T_other - T_node) into `node`; other = -1 is outdoor
  auto couple = [&](int node, int other, double g) {
    ac(node, node) -= g / cap[node];
    if (other >= 0)
      ac(node, other) += g / cap[node];
    else
      ec(node, 0) += g / cap[node];
  };
  for (int k = 0; k < nwall; ++k) {
    const Wall& w = walls[k];
    const int node = nz + k;
    const double ga = w.area / w.r_a, gb = w.area / w.r_b;
    couple(node, w.side_a, ga);
    if (w.side_a >= 0) couple(w.side_a, node, ga);
    couple(node, w.side_b, gb);
    if (w.side_b >= 0) couple(w.side_b, node, gb);
  }
  for (int z = 0; z < nz; ++z) {
    couple(z, -1, ach * zone_volume[z] * air_cap / 3600.0);  // infiltration
    for (int k = 0; k < 2; ++k) bc(z, k) = heat_split[k][z] * 1000.0 / cap[z];
    ec(z, 1) = aperture[z] / cap[z];
  }

  // exact zero-order-hold discretization through the augmented exponential
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(nx + 4, nx + 4);
  big.topLeftCorner(nx, nx) = ac;
  big.block(0, nx, nx, 2) = bc;
  big.block(0, nx + 2, nx, 2) = ec;
  const Eigen::MatrixXd ebig = (big * dt).exp();

  PlantModel m;
  m.a = ebig.topLeftCorner(nx, nx);
  m.b = ebig.block(0, nx, nx, 2);
  m.e = ebig.block(0, nx + 2, nx, 2);
  m.c = Eigen::MatrixXd::Zero(nz, nx);
  m.c.leftCols(nz).setIdentity();
  m.d = Eigen::MatrixXd::Zero(nz, 2);
  return m;
}

void check_preset_stability(const PlantModel& m, const std::string& name) {
  // eigenvalues of A + cI are those of A shifted by c, and |lambda + c| is
  // convex in c, so checking the drift extremes covers the whole range
  for (double s : {-1.0, 0.0, 1.0}) {
    Eigen::MatrixXd a = m.a;
    a.diagonal().array() += s * m.drift_amplitude;
    const double rho = spectral_radius(a);
    if (rho >= 1.0)
      throw ConfigError("preset " + name + ": unstable drift extreme, spectral radius " +
                        std::to_string(rho));
  }
}

}  // namespace

PlantModel preset(const std::string& name) {
  PlantModel m;
  if (name == "second_order_lti") {
    m = second_order_plant_model();
  } else if (name == "second_order_ltv") {
    m = second_order_plant_model();
    m.drift_amplitude = 0.02;
    m.drift_period = 336.0;
  } else if (name == "rc_multizone") {
    m = rc_multizone_plant_model();
  } else {
    throw ConfigError("unknown preset: " + name);
  }
  m.validate();
  check_preset_stability(m, name);
  return m;
}

PlantStepResult plant_step(const PlantModel& model, Eigen::Index i, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& u, const Eigen::VectorXd& w, double sigma_v,
                           Rng& rng) {
  if (x.size() != model.n_x()) throw DimensionError("plant_step: state size mismatch");
  if (u.size() != model.n_u()) throw DimensionError("plant_step: input size mismatch");
  if (w.size() != model.n_w()) throw DimensionError("plant_step: disturbance size mismatch");
  if (sigma_v < 0.0) throw ConfigError("plant_step: sigma_v must be nonnegative");

  PlantStepResult out;
  out.x_next = model.a_at(i) * x + model.b * u + model.e * w;
  out.y_true = model.c * x + model.d * u;
  out.y_measured = out.y_true;
  if (sigma_v > 0.0) out.y_measured += rng.normal_vector(model.n_y(), sigma_v);
  return out;
}

DisturbanceTrace synthesize_disturbance(const std::vector<DisturbanceChannel>& channels,
                                        Eigen::Index steps, std::uint64_t seed) {
  if (channels.empty()) throw ConfigError("synthesize_disturbance: no channels");
  if (steps < 1) throw DimensionError("synthesize_disturbance: steps must be positive");
  const Eigen::Index n_w = static_cast<Eigen::Index>(channels.size());
  DisturbanceTrace tr;
  tr.w_bar.resize(n_w, steps);
  tr.w.resize(n_w, steps);
  for (Eigen::Index ch = 0; ch < n_w; ++ch) {
    const DisturbanceChannel& spec = channels[static_cast<std::size_t>(ch)];
    if (spec.period <= 0.0) throw ConfigError("disturbance channel: period must be positive");
    if (spec.noise_halfwidth < 0.0)
      throw ConfigError("disturbance channel: noise halfwidth must be nonnegative");
    Rng rng = Rng(seed).substream(static_cast<std::uint64_t>(ch));
    for (Eigen::Index i = 0; i < steps; ++i) {
      double nominal = spec.offset + spec.amplitude * std::sin(2.0 * M_PI * static_cast<double>(i) /
                                                                   spec.period +
                                                               spec.phase);
      if (spec.rectified) nominal = std::max(0.0, nominal);
      tr.w_bar(ch, i) = nominal;
      tr.w(ch, i) = nominal + rng.uniform(-spec.noise_halfwidth, spec.noise_halfwidth);
    }
  }
  return tr;
}

void Scenario::validate(const PlantModel& model) const {
  if (run_steps < 1) throw ConfigError("scenario: run length must be at least 1");
  if (warmup_steps < 1) throw ConfigError("scenario: warm-up length must be at least 1");
  if (sigma_v < 0.0) throw ConfigError("scenario: sigma_v must be nonnegative");
  if (recorded_w.size() == 0 &&
      static_cast<Eigen::Index>(disturbance.size()) != model.n_w())
    throw DimensionError("scenario: one disturbance channel per plant w input required");
  if (recorded_w.size() > 0 && recorded_w.rows() != model.n_w())
    throw DimensionError("scenario: recorded series row count mismatch");
  if (recorded_w_bar.size() > 0 &&
      (recorded_w_bar.rows() != recorded_w.rows() || recorded_w_bar.cols() != recorded_w.cols()))
    throw DimensionError("scenario: recorded forecast shape mismatch");
  if (forecast_tube.dim() != model.n_w()) throw DimensionError("scenario: forecast tube dimension mismatch");
  if (u_set.dim() != model.n_u()) throw DimensionError("scenario: input box dimension mismatch");
  if (y_set.dim() != model.n_y()) throw DimensionError("scenario: output box dimension mismatch");
  if (!u_set.lo.allFinite() || !u_set.hi.allFinite())
    throw ConfigError("scenario: warm-up samples uniformly from the input box, so it must be bounded");
  if (x0.size() != 0 && x0.size() != model.n_x())
    throw DimensionError("scenario: x0 size mismatch");
}

void ControllerSpec::validate() const {
  if (t_init < 1 || n_h < 1) throw ConfigError("controller: t_init and n_h must be positive");
  switch (e_g_kind) {
    case EgKind::constant:
      if (e_g_first <= 0.0) throw ConfigError("controller: constant regularizer must be positive");
      break;
    case EgKind::linear:
      if (e_g_last <= 0.0 || e_g_first < e_g_last)
        throw ConfigError("controller: linear regularizer profile must be non-increasing and positive");
      break;
    case EgKind::from_noise:
      if (tinit_exponent != 1 && tinit_exponent != 2)
        throw ConfigError("controller: noise-derived regularizer exponent must be 1 or 2");
      if (noise_stddev < 0.0) throw ConfigError("controller: noise_stddev must be nonnegative");
      break;
  }
  if (eta_g < 0.0 || eta_sigma < 0.0)
    throw ConfigError("controller: eta weights must be nonnegative");
  if (rls_lambda <= 0.0 || rls_lambda > 1.0)
    throw ConfigError("controller: forgetting factor must lie in (0, 1]");
  if (rls_p0 <= 0.0) throw ConfigError("controller: initial covariance scale must be positive");
  if (data_capacity < 0) throw ConfigError("controller: data capacity must be nonnegative");
  if (excitation_enabled && type != Type::bilevel_robust)
    throw ConfigError("controller: excitation applies to the bi-level robust controller only");
  if (excitation_enabled && e_g_kind != EgKind::constant)
    throw ConfigError("controller: excitation requires a constant regularizer weight");
}

namespace {

RegularizerWeights make_weights(const ControllerSpec& spec, Eigen::Index n_c, Eigen::Index n_y,
                                double scenario_sigma) {
  switch (spec.e_g_kind) {
    case ControllerSpec::EgKind::linear:
      return RegularizerWeights::linear(n_c, spec.e_g_first, spec.e_g_last);
    case ControllerSpec::EgKind::from_noise: {
      const double sd = spec.noise_stddev > 0.0 ? spec.noise_stddev : scenario_sigma;
      return RegularizerWeights::from_noise(n_c, spec.t_init, NoiseModel::isotropic(n_y, sd),
                                            spec.tinit_exponent);
    }
    case ControllerSpec::EgKind::constant:
    default:
      return RegularizerWeights::constant(n_c, spec.e_g_first);
  }
}

// last t_init completed samples, oldest first
struct RollingHistory {
  std::deque<Eigen::VectorXd> u, w, y;
  Eigen::Index cap;

  explicit RollingHistory(Eigen::Index t_init) : cap(t_init) {}

  void push(const Eigen::VectorXd& ui, const Eigen::VectorXd& wi, const Eigen::VectorXd& yi) {
    u.push_back(ui);
    w.push_back(wi);
    y.push_back(yi);
    if (static_cast<Eigen::Index>(u.size()) > cap) {
      u.pop_front();
      w.pop_front();
      y.pop_front();
    }
  }

  ControlHistory stacked() const {
    const Eigen::Index t = static_cast<Eigen::Index>(u.size());
    ControlHistory h;
    h.u_init.resize(t * u.front().size());
    h.w_init.resize(t * w.front().size());
    h.y_init.resize(t * y.front().size());
    for (Eigen::Index i = 0; i < t; ++i) {
      h.u_init.segment(i * u.front().size(), u.front().size()) = u[static_cast<std::size_t>(i)];
      h.w_init.segment(i * w.front().size(), w.front().size()) = w[static_cast<std::size_t>(i)];
      h.y_init.segment(i * y.front().size(), y.front().size()) = y[static_cast<std::size_t>(i)];
    }
    return h;
  }
};

Box widened(const Box& box, double margin) {
  Eigen::VectorXd lo = box.lo, hi = box.hi;
  for (Eigen::Index i = 0; i < box.dim(); ++i) {
    if (std::isfinite(lo[i])) lo[i] -= margin;
    if (std::isfinite(hi[i])) hi[i] += margin;
  }
  return Box(lo, hi);
}

struct StepSolve {
  Eigen::VectorXd u;       // applied input
  Eigen::VectorXd u_plan;  // full-horizon nominal plan, for the PE heuristic
  bool excited = false;
  bool pe_flag = false;
};

bool step_violates(const StepLog& row) {
  for (Eigen::Index ch = 0; ch < row.y_true.size(); ++ch) {
    if (row.y_true[ch] < row.ybox_lo[ch] || row.y_true[ch] > row.ybox_hi[ch]) return true;
  }
  return false;
}

Metrics compute_metrics(const std::vector<StepLog>& log) {
  Metrics m;
  double sum_y = 0.0;
  Eigen::Index n_y_entries = 0;
  m.max_output = -std::numeric_limits<double>::infinity();
  double energy_sum = 0.0;
  for (const StepLog& row : log) {
    if (row.mode == "warmup") continue;
    ++m.control_steps;
    if (step_violates(row)) ++m.violations;
    sum_y += row.y_true.sum();
    n_y_entries += row.y_true.size();
    m.max_output = std::max(m.max_output, row.y_true.maxCoeff());
    energy_sum += row.u.lpNorm<1>();
  }
  if (m.control_steps > 0) {
    m.violation_rate = static_cast<double>(m.violations) / static_cast<double>(m.control_steps);
    m.mean_output = sum_y / static_cast<double>(n_y_entries);
    m.energy = energy_sum / static_cast<double>(m.control_steps);
  } else {
    m.max_output = 0.0;
  }
  return m;
}

}  // namespace

RunResult run_closed_loop(const Scenario& scenario, const ControllerSpec& spec) {
  const PlantModel model = preset(scenario.preset_name);
  scenario.validate(model);
  spec.validate();
  if (spec.excitation_enabled) spec.excitation.validate(scenario.u_set);

  const Eigen::Index n_u = model.n_u(), n_w = model.n_w(), n_y = model.n_y();
  const Eigen::Index total = scenario.warmup_steps + scenario.run_steps;
  const Eigen::Index trace_len = total + spec.n_h;

  DisturbanceTrace trace;
  if (scenario.recorded_w.size() > 0) {
    if (scenario.recorded_w.cols() < trace_len)
      throw DimensionError("scenario: recorded series shorter than warm-up + run + horizon");
    trace.w = scenario.recorded_w.leftCols(trace_len);
    trace.w_bar = scenario.recorded_w_bar.size() > 0
                      ? Eigen::MatrixXd(scenario.recorded_w_bar.leftCols(trace_len))
                      : trace.w;
  } else {
    trace = synthesize_disturbance(scenario.disturbance, trace_len, Rng(scenario.seed).substream(0).seed());
  }
  if (scenario.consistent_forecast) {
    const Eigen::VectorXd hw = scenario.forecast_tube.halfwidth();
    const Eigen::VectorXd mid = scenario.forecast_tube.center();
    for (Eigen::Index i = 0; i < trace_len; ++i) {
      for (Eigen::Index ch = 0; ch < n_w; ++ch) {
        const double dev = trace.w(ch, i) - trace.w_bar(ch, i) - mid[ch];
        if (std::abs(dev) > hw[ch])
          throw ConfigError("scenario: realized disturbance leaves the forecast tube at step " +
                            std::to_string(i));
      }
    }
  }

  Rng warm_rng = Rng(scenario.seed).substream(1);
  Rng noise_rng = Rng(scenario.seed).substream(2);

  const Eigen::Index capacity = spec.data_capacity > 0 ? spec.data_capacity : total;
  Dataset data(n_u, n_w, n_y, capacity);
  RollingHistory history(spec.t_init);

  RunResult out;
  out.log.reserve(static_cast<std::size_t>(total));
  Eigen::VectorXd x = scenario.x0.size() > 0 ? scenario.x0 : Eigen::VectorXd::Zero(model.n_x());

  for (Eigen::Index i = 0; i < scenario.warmup_steps; ++i) {
    const Eigen::VectorXd u = warm_rng.uniform_vector(scenario.u_set.lo, scenario.u_set.hi);
    const Eigen::VectorXd w = trace.w.col(i);
    const PlantStepResult ps = plant_step(model, i, x, u, w, scenario.sigma_v, noise_rng);
    out.log.push_back({i, "warmup", false, u, w, ps.y_true, ps.y_measured, scenario.y_set.lo,
                       scenario.y_set.hi, 0.0});
    data.push(u, w, ps.y_measured);
    history.push(u, w, ps.y_measured);
    x = ps.x_next;
  }

  RlsState rls;
  if (spec.type == ControllerSpec::Type::rls_mpc)
    rls = rls_init(data, spec.t_init, spec.rls_lambda, spec.rls_p0);

  const double pe_tol =
      spec.excitation.pe_tolerance * (scenario.u_set.hi - scenario.u_set.lo).maxCoeff();

  auto solve_once = [&](const ControlHistory& hist, const Forecast& fc, const ConstraintSets& sets,
                        Eigen::Index step) -> StepSolve {
    StepSolve s;
    switch (spec.type) {
      case ControllerSpec::Type::bilevel_robust: {
        if (spec.excitation_enabled) {
          const ExcitationStepResult er =
              excitation_step(data, spec.t_init, spec.n_h, spec.e_g_first, hist, fc, sets,
                              scenario.objective, spec.excitation, step, spec.qp);
          s.u = er.u_applied;
          s.u_plan = er.solution.u_nominal;
          s.excited = er.excited;
          s.pe_flag = er.pe_flag;
          return s;
        }
        const HankelStack stack = build_stack(data, spec.t_init, spec.n_h);
        const KktFactor factor =
            factorize_kkt(stack, make_weights(spec, stack.n_c, n_y, scenario.sigma_v));
        const ControlSolution cs =
            solve_control(factor, stack, hist, fc, sets, scenario.objective, spec.qp);
        s.u = cs.u_nominal.head(n_u);
        s.u_plan = cs.u_nominal;
        break;
      }
      case ControllerSpec::Type::bilevel_nonrobust: {
        const HankelStack stack = build_stack(data, spec.t_init, spec.n_h);
        const KktFactor factor =
            factorize_kkt(stack, make_weights(spec, stack.n_c, n_y, scenario.sigma_v));
        const ControlSolution cs = non_robust_control(factor, stack, hist, fc.w_bar, sets,
                                                      scenario.objective, spec.qp);
        s.u = cs.u_nominal.head(n_u);
        s.u_plan = cs.u_nominal;
        break;
      }
      case ControllerSpec::Type::single_level: {
        const HankelStack stack = build_stack(data, spec.t_init, spec.n_h);
        const SingleLevelSolution sol = single_level_deepc(
            stack, hist, sets, spec.eta_g, spec.eta_sigma, scenario.objective, fc.w_bar, spec.qp);
        s.u = sol.u_pred.head(n_u);
        s.u_plan = sol.u_pred;
        break;
      }
      case ControllerSpec::Type::rls_mpc: {
        const ControlSolution cs = rls_robust_mpc(rls.model(), hist, spec.n_h, fc, sets,
                                                  scenario.objective, spec.qp);
        s.u = cs.u_nominal.head(n_u);
        s.u_plan = cs.u_nominal;
        break;
      }
    }
    s.pe_flag = pe_heuristic(s.u_plan, pe_tol);
    return s;
  };

  for (Eigen::Index i = scenario.warmup_steps; i < total; ++i) {
    const ControlHistory hist = history.stacked();
    Forecast fc;
    fc.w_bar.resize(spec.n_h * n_w);
    for (Eigen::Index k = 0; k < spec.n_h; ++k) fc.w_bar.segment(k * n_w, n_w) = trace.w_bar.col(i + k);
    fc.deviation = scenario.forecast_tube;
    const ConstraintSets sets{scenario.u_set, scenario.y_set};

    StepSolve step;
    bool relaxed = false;
    const auto t_start = std::chrono::steady_clock::now();
    try {
      step = solve_once(hist, fc, sets, i);
    } catch (const InfeasibleError& first) {
      bool recovered = false;
      if (spec.policy == RunPolicy::relax_and_continue) {
        Eigen::VectorXd hw = scenario.y_set.halfwidth();
        double base = 0.0;
        for (Eigen::Index ch = 0; ch < hw.size(); ++ch)
          if (std::isfinite(hw[ch])) base = std::max(base, hw[ch]);
        if (base == 0.0) base = 1.0;
        for (int k = 0; k < 14 && !recovered; ++k) {
          const double margin = base * 1e-3 * std::pow(2.0, k);
          try {
            step = solve_once(hist, fc, {scenario.u_set, widened(scenario.y_set, margin)}, i);
            recovered = true;
            relaxed = true;
          } catch (const InfeasibleError&) {
          } catch (const SolveError&) {
            // a barely widened problem sits on the feasibility knife edge and
            // can stall; a larger margin is still worth trying
          } catch (const FactorizationError&) {
            break;  // structural, wider output bounds cannot fix it
          }
        }
      }
      if (!recovered) {
        out.aborted = true;
        out.abort_reason = first.what();
        out.abort_step = i;
        break;
      }
    } catch (const SolveError& e) {
      out.aborted = true;
      out.abort_reason = e.what();
      out.abort_step = i;
      break;
    } catch (const FactorizationError& e) {
      out.aborted = true;
      out.abort_reason = e.what();
      out.abort_step = i;
      break;
    }
    const double solve_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();

    const Eigen::VectorXd w = trace.w.col(i);
    const PlantStepResult ps = plant_step(model, i, x, step.u, w, scenario.sigma_v, noise_rng);
    out.log.push_back({i, relaxed ? "relaxed" : "control", step.excited, step.u, w, ps.y_true,
                       ps.y_measured, scenario.y_set.lo, scenario.y_set.hi, solve_ms});

    const bool freeze = spec.excitation.freeze_on_nonpe && step.pe_flag && !step.excited;
    if (!freeze) data.push(step.u, w, ps.y_measured);
    if (spec.type == ControllerSpec::Type::rls_mpc)
      rls = rls_update(rls, arx_regressor(rls.model(), hist), ps.y_measured);
    history.push(step.u, w, ps.y_measured);
    x = ps.x_next;
  }

  out.metrics = compute_metrics(out.log);
  out.final_data = std::move(data);
  return out;
}

namespace {

// control-phase rows only; returns (violating steps, steps)
std::pair<Eigen::Index, Eigen::Index> count_violations(const std::vector<StepLog>& log,
                                                       const Box& y_set) {
  Eigen::Index steps = 0, bad = 0;
  for (const StepLog& row : log) {
    if (row.mode == "warmup") continue;
    if (row.y_true.size() != y_set.dim())
      throw DimensionError("violation_rate: log output dimension mismatch");
    ++steps;
    for (Eigen::Index ch = 0; ch < y_set.dim(); ++ch) {
      if (row.y_true[ch] < y_set.lo[ch] || row.y_true[ch] > y_set.hi[ch]) {
        ++bad;
        break;
      }
    }
  }
  return {bad, steps};
}

}  // namespace

double violation_rate(const std::vector<std::vector<StepLog>>& logs, const Box& y_set) {
  if (logs.empty()) throw DimensionError("violation_rate: no logs");
  Eigen::Index steps = 0, bad = 0;
  for (const std::vector<StepLog>& log : logs) {
    const auto [b, s] = count_violations(log, y_set);
    bad += b;
    steps += s;
  }
  return steps == 0 ? 0.0 : static_cast<double>(bad) / static_cast<double>(steps);
}

namespace {

void format_value(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

void write_group_header(std::ostream& out, const char* prefix, Eigen::Index n) {
  for (Eigen::Index i = 1; i <= n; ++i) out << "," << prefix << "_" << i;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_run_csv(std::ostream& out, const std::vector<StepLog>& log) {
  if (log.empty()) throw DimensionError("write_run_csv: empty log");
  const Eigen::Index n_u = log.front().u.size(), n_w = log.front().w.size(),
                     n_y = log.front().y_true.size();
  out << "step,mode,excited";
  write_group_header(out, "u", n_u);
  write_group_header(out, "w", n_w);
  write_group_header(out, "y_true", n_y);
  write_group_header(out, "y_meas", n_y);
  write_group_header(out, "ybox_lo", n_y);
  write_group_header(out, "ybox_hi", n_y);
  out << ",solve_ms\n";
  for (const StepLog& row : log) {
    out << row.step << "," << row.mode << "," << (row.excited ? 1 : 0);
    for (const Eigen::VectorXd* v : {&row.u, &row.w, &row.y_true, &row.y_meas, &row.ybox_lo,
                                     &row.ybox_hi}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) {
        out << ",";
        format_value(out, (*v)[i]);
      }
    }
    out << ",";
    format_value(out, row.solve_ms);
    out << "\n";
  }
}

void write_run_csv(const std::string& path, const std::vector<StepLog>& log) {
  std::ofstream f(path);
  if (!f) throw ConfigError("write_run_csv: cannot open " + path);
  write_run_csv(f, log);
}

std::vector<StepLog> read_run_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("read_run_csv: empty input");
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "step" || header[1] != "mode" || header[2] != "excited" ||
      header.back() != "solve_ms")
    throw ConfigError("read_run_csv: unexpected header layout");
  Eigen::Index n_u = 0, n_w = 0, n_y = 0;
  for (std::size_t i = 3; i + 1 < header.size(); ++i) {
    const std::string& h = header[i];
    if (h.rfind("u_", 0) == 0) ++n_u;
    else if (h.rfind("w_", 0) == 0) ++n_w;
    else if (h.rfind("y_true_", 0) == 0) ++n_y;
    else if (h.rfind("y_meas_", 0) == 0 || h.rfind("ybox_lo_", 0) == 0 ||
             h.rfind("ybox_hi_", 0) == 0) {
      // counted through y_true
    } else {
      throw ConfigError("read_run_csv: unknown column " + h);
    }
  }
  const Eigen::Index expected = 3 + n_u + n_w + 4 * n_y + 1;
  if (static_cast<Eigen::Index>(header.size()) != expected)
    throw ConfigError("read_run_csv: inconsistent column groups");

  std::vector<StepLog> log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (static_cast<Eigen::Index>(cells.size()) != expected)
      throw ConfigError("read_run_csv: wrong cell count in row " + line);
    StepLog row;
    row.step = std::stoll(cells[0]);
    row.mode = cells[1];
    row.excited = cells[2] == "1";
    std::size_t at = 3;
    auto take = [&](Eigen::Index n) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) v[i] = std::stod(cells[at++]);
      return v;
    };
    row.u = take(n_u);
    row.w = take(n_w);
    row.y_true = take(n_y);
    row.y_meas = take(n_y);
    row.ybox_lo = take(n_y);
    row.ybox_hi = take(n_y);
    row.solve_ms = std::stod(cells[at]);
    log.push_back(std::move(row));
  }
  return log;
}

std::vector<StepLog> read_run_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("read_run_csv: cannot open " + path);
  return read_run_csv(f);
}

Aggregate aggregate_runs(const std::vector<RunResult>& runs, const Box& y_set) {
  if (runs.empty()) throw DimensionError("aggregate_runs: no runs");
  Aggregate agg;
  agg.runs = static_cast<Eigen::Index>(runs.size());
  Eigen::Index violations = 0;
  double energy_sum = 0.0;
  for (const RunResult& r : runs) {
    const auto [bad, steps] = count_violations(r.log, y_set);
    violations += bad;
    agg.steps += steps;
    energy_sum += r.metrics.energy;
    if (r.aborted) ++agg.aborted_runs;
  }
  agg.violation_rate = agg.steps == 0 ? 0.0 : static_cast<double>(violations) / static_cast<double>(agg.steps);
  agg.energy_mean = energy_sum / static_cast<double>(agg.runs);
  return agg;
}

std::uint64_t run_seed(std::uint64_t scenario_seed, Eigen::Index idx) {
  return Rng(scenario_seed).substream(static_cast<std::uint64_t>(idx)).seed();
}

std::vector<RunResult> run_monte_carlo(const Scenario& scenario, const ControllerSpec& spec,
                                       Eigen::Index n_runs, int n_threads) {
  if (n_runs < 1) throw ConfigError("run_monte_carlo: need at least one run");
  std::vector<RunResult> out(static_cast<std::size_t>(n_runs));
  auto work = [&](Eigen::Index idx) {
    Scenario s = scenario;
    s.seed = run_seed(scenario.seed, idx);
    out[static_cast<std::size_t>(idx)] = run_closed_loop(s, spec);
  };
  const int workers = std::max(1, std::min<int>(n_threads, static_cast<int>(n_runs)));
  if (workers == 1) {
    for (Eigen::Index i = 0; i < n_runs; ++i) work(i);
    return out;
  }
  std::atomic<Eigen::Index> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        const Eigen::Index idx = next.fetch_add(1);
        if (idx >= n_runs) return;
        try {
          work(idx);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace rdpc
