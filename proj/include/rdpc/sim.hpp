#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rdpc/box.hpp"
#include "rdpc/excitation.hpp"
#include "rdpc/hankel.hpp"
#include "rdpc/qp.hpp"
#include "rdpc/rng.hpp"
#include "rdpc/robust.hpp"

namespace rdpc {

// Linear plant x_{i+1} = A_i x_i + B u_i + E w_i, y_i = C x_i + D u_i (+ v_i).
// Time variation is an additive diagonal drift on A:
//   A_i = A + drift_amplitude * sin(i*pi/drift_period) * I.
struct PlantModel {
  Eigen::MatrixXd a, b, c, d, e;
  double drift_amplitude = 0.0;
  double drift_period = 336.0;  // steps per half oscillation

  Eigen::Index n_x() const { return a.rows(); }
  Eigen::Index n_u() const { return b.cols(); }
  Eigen::Index n_w() const { return e.cols(); }
  Eigen::Index n_y() const { return c.rows(); }
  bool is_ltv() const { return drift_amplitude != 0.0; }

  Eigen::MatrixXd a_at(Eigen::Index i) const;
  void validate() const;
};

double spectral_radius(const Eigen::MatrixXd& m);

// Presets: second_order_lti, second_order_ltv, rc_multizone.  Construction
// asserts spectral radius < 1; for the drifting preset the check runs at both
// drift extremes (A + cI shifts every eigenvalue by c and |lambda + c| is
// convex in c, so the extremes bound the whole range).
PlantModel preset(const std::string& name);

struct PlantStepResult {
  Eigen::VectorXd x_next, y_true, y_measured;
};

// Exact linear update; y_measured = y_true + v, v ~ N(0, sigma_v^2 I) drawn
// from the caller's stream (sigma_v = 0 draws nothing).
PlantStepResult plant_step(const PlantModel& model, Eigen::Index i, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& u, const Eigen::VectorXd& w, double sigma_v,
                           Rng& rng);

// Synthetic disturbance channel: offset + amplitude*sin(2*pi*i/period + phase)
// plus seeded uniform noise in [-noise_halfwidth, noise_halfwidth].
// `rectified` clamps the nominal at zero (radiation-like signals).
struct DisturbanceChannel {
  double amplitude = 1.0;
  double period = 96.0;  // steps per full cycle
  double offset = 0.0;
  double phase = 0.0;
  double noise_halfwidth = 0.0;
  bool rectified = false;
};

struct DisturbanceTrace {
  Eigen::MatrixXd w_bar;  // n_w x steps, forecast nominal
  Eigen::MatrixXd w;      // realized = nominal + noise
};

DisturbanceTrace synthesize_disturbance(const std::vector<DisturbanceChannel>& channels,
                                        Eigen::Index steps, std::uint64_t seed);

// One closed-loop experiment: plant preset, disturbance source (synthetic
// channels, or a recorded series when `recorded_w` is non-empty), forecast
// tube, noise level, phase lengths, constraint boxes, and the seed that
// derives every random stream.  The constraint schedule is constant over the
// run; u_set must be bounded (warm-up samples uniformly from it).
struct Scenario {
  std::string preset_name = "second_order_lti";
  std::vector<DisturbanceChannel> disturbance;
  Eigen::MatrixXd recorded_w;      // n_w x steps; empty selects the synthetic source
  Eigen::MatrixXd recorded_w_bar;  // forecast for the recorded series; empty copies recorded_w
  Box forecast_tube;               // n_w deviation box around the nominal
  bool consistent_forecast = true;  // audit: realized w stays inside the tube
  double sigma_v = 0.0;
  Eigen::Index warmup_steps = 40;
  Eigen::Index run_steps = 50;
  Eigen::VectorXd x0;  // empty: origin
  Box u_set;           // n_u
  Box y_set;           // n_y; sides may be infinite
  ObjectiveSpec objective;
  std::uint64_t seed = 1;

  void validate(const PlantModel& model) const;
};

enum class RunPolicy {
  abort_and_record,   // stop at the failing step, keep the partial log
  relax_and_continue  // widen the output box by the smallest doubling-search
                      // margin that restores feasibility; the step is logged
                      // as "relaxed" and metrics still count violations
                      // against the original box
};

struct ControllerSpec {
  enum class Type { bilevel_robust, bilevel_nonrobust, single_level, rls_mpc };
  Type type = Type::bilevel_robust;
  Eigen::Index t_init = 10;
  Eigen::Index n_h = 10;

  // E_g profile over the dataset columns, re-evaluated as the dataset grows.
  enum class EgKind { constant, linear, from_noise };
  EgKind e_g_kind = EgKind::constant;
  double e_g_first = 1e-3;
  double e_g_last = 1e-3;
  int tinit_exponent = 2;   // from_noise only
  double noise_stddev = 0;  // from_noise only; 0 copies the scenario sigma_v

  double eta_g = 1.0;      // single_level
  double eta_sigma = 1.0;  // single_level
  double rls_lambda = 0.98;
  double rls_p0 = 1e3;

  Eigen::Index data_capacity = 0;  // 0: retain every sample
  bool excitation_enabled = false;
  ExcitationConfig excitation;  // freeze_on_nonpe and pe_tolerance also apply
                                // when excitation itself is disabled
  RunPolicy policy = RunPolicy::abort_and_record;
  QpSettings qp;

  void validate() const;
};

// One logged step.  mode is "warmup", "control" or "relaxed"; ybox_* is the
// original constraint schedule even on relaxed steps, so metrics are
// recomputable from the log alone.
struct StepLog {
  Eigen::Index step = 0;
  std::string mode;
  bool excited = false;
  Eigen::VectorXd u, w, y_true, y_meas, ybox_lo, ybox_hi;
  double solve_ms = 0.0;
};

// Aggregates over the control phase (warm-up rows excluded).  Violations are
// counted on the true output against the original box, boundary inclusive;
// energy is the mean per-step l1 norm of the applied input.
struct Metrics {
  double violation_rate = 0.0;
  double mean_output = 0.0;
  double max_output = 0.0;
  double energy = 0.0;
  Eigen::Index control_steps = 0;
  Eigen::Index violations = 0;
};

struct RunResult {
  std::vector<StepLog> log;
  Metrics metrics;
  bool aborted = false;
  std::string abort_reason;
  Eigen::Index abort_step = -1;
  std::optional<Dataset> final_data;  // for PE audits
};

// Warm-up data collection followed by the receding-horizon loop:
// measure, update dataset, solve, apply the first input, advance the plant.
// Solver failures follow `spec.policy`; an aborted run keeps the partial log.
RunResult run_closed_loop(const Scenario& scenario, const ControllerSpec& spec);

// Fraction of control-phase steps whose true output leaves the box, pooled
// over all logs: violating steps / (steps x runs).  Boundary-exact values are
// feasible.
double violation_rate(const std::vector<std::vector<StepLog>>& logs, const Box& y_set);

// Per-run trajectory log CSV:
// step, mode, excited, u_*, w_*, y_true_*, y_meas_*, ybox_lo_*, ybox_hi_*, solve_ms.
void write_run_csv(std::ostream& out, const std::vector<StepLog>& log);
void write_run_csv(const std::string& path, const std::vector<StepLog>& log);
std::vector<StepLog> read_run_csv(std::istream& in);
std::vector<StepLog> read_run_csv(const std::string& path);

struct Aggregate {
  double violation_rate = 0.0;
  double energy_mean = 0.0;  // mean of per-run energies
  Eigen::Index runs = 0;
  Eigen::Index steps = 0;  // total control steps across runs
  Eigen::Index aborted_runs = 0;
};

Aggregate aggregate_runs(const std::vector<RunResult>& runs, const Box& y_set);

// Seed of Monte-Carlo run `idx` derived from the scenario seed.
std::uint64_t run_seed(std::uint64_t scenario_seed, Eigen::Index idx);

// Independent closed loops, one per run seed, optionally on a worker pool;
// results are ordered by run index regardless of scheduling.
std::vector<RunResult> run_monte_carlo(const Scenario& scenario, const ControllerSpec& spec,
                                       Eigen::Index n_runs, int n_threads = 1);

}  // namespace rdpc
