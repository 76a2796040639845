#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "rdpc/box.hpp"
#include "rdpc/hankel.hpp"
#include "rdpc/robust.hpp"
#include "rdpc/rng.hpp"

namespace rdpc {

// Pontryagin difference of boxes: [a.lo - b.lo, a.hi - b.hi].  Any x in the
// result plus any y in b lies in a.  Empty results are rejected.
Box minkowski_diff_box(const Box& a, const Box& b);

// Per-step uncertainty for the excited re-solve: the Cartesian product of the
// forecast deviation box and the excitation set.
Box augment_uncertainty(const Box& w_box, const Box& u_e_box);

// History in the augmented disturbance coordinates: every step contributes
// [w_init_step; 0] (no excitation was injected through that channel).
Eigen::VectorXd augment_history(const Eigen::VectorXd& w_init, Eigen::Index t_init,
                                Eigen::Index n_u);

// Hankel stack of the input-augmented system built from the recorded data.
// Every recorded column (u, w, y) is also a valid trajectory of the augmented
// system with the excitation channel carrying the recorded input, so the
// augmented stack has twice the columns:
//   [u; (w, u_e); y]  <-  (u, (w, 0), y)  and  (0, (w, u), y).
HankelStack augmented_stack(const Dataset& data, Eigen::Index t_init, Eigen::Index n_h);

struct ExcitationConfig {
  Box u_e_box;                 // per-step excitation set, dim n_u
  double pe_tolerance = 1e-3;  // fraction of the widest input-box side
  std::uint64_t rng_seed = 0;
  bool use_exact_rank = false;
  bool freeze_on_nonpe = false;  // closed-loop Hankel update policy

  // rejects excitation sets not contained in the per-step input box and
  // tightened sets that collapse to a single point
  void validate(const Box& u_step_box) const;
};

// Deterministic counter-based draw: identical (seed, step) always yields the
// same excitation input, regardless of call history.
Eigen::VectorXd sample_excitation(const ExcitationConfig& cfg, Eigen::Index step);

struct ExcitationStepResult {
  Eigen::VectorXd u_applied;  // n_u, equals u_nominal_first + u_e
  Eigen::VectorXd u_e;        // n_u, zero on the nominal branch
  bool excited = false;
  bool pe_flag = false;       // PE check requested excitation
  ControlSolution solution;   // solution of the branch that was applied
};

// One receding-horizon step of the excited controller: nominal solve with the
// plain uncertainty; if the PE check flags the planned input, re-solve with
// the input set tightened by the excitation set and the uncertainty augmented,
// then add a sampled excitation input.
ExcitationStepResult excitation_step(const Dataset& data, Eigen::Index t_init, Eigen::Index n_h,
                                     double e_g_value, const ControlHistory& history,
                                     const Forecast& forecast, const ConstraintSets& sets,
                                     const ObjectiveSpec& objective, const ExcitationConfig& cfg,
                                     Eigen::Index step, const QpSettings& qp_settings = {});

}  // namespace rdpc
