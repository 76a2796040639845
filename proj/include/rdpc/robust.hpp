#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rdpc/box.hpp"
#include "rdpc/predictor.hpp"
#include "rdpc/qp.hpp"

namespace rdpc {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Lower-block-triangular feedback structure: block (i, j) of the gain may be
// nonzero iff j < i (1-based), so the first block row is always zero.
BoolMatrix causality_mask(Eigen::Index n_h, Eigen::Index n_u, Eigen::Index n_w_aug);

// One bilinear product weight * z[dec] * w[unc] contributing to output `row`.
struct BilinearTerm {
  Eigen::Index dec = 0;
  Eigen::Index unc = 0;
  Eigen::Index row = 0;
  double weight = 0.0;
};

// Vector-valued expression affine in the decision vector z and in the
// uncertainty w, plus bilinear couplings between the two:
//   value = constant + coeff_dec z + coeff_unc w + sum_k weight_k z[dec_k] w[unc_k] e_{row_k}
struct AffineExpr {
  Eigen::VectorXd constant;
  Eigen::MatrixXd coeff_dec;
  Eigen::MatrixXd coeff_unc;
  std::vector<BilinearTerm> bilinear;

  Eigen::Index rows() const { return constant.size(); }
  Eigen::Index n_dec() const { return coeff_dec.cols(); }
  Eigen::Index n_unc() const { return coeff_unc.cols(); }

  void validate() const;
  Eigen::VectorXd evaluate(const Eigen::VectorXd& z, const Eigen::VectorXd& w) const;
};

// Incremental constraint assembly with a growing variable set.  Rows are kept
// sparse until finish() materializes the dense canonical QP (costs are filled
// in by the caller afterwards).
class QpBuilder {
 public:
  explicit QpBuilder(Eigen::Index n_vars);

  Eigen::Index n_vars() const { return n_vars_; }
  Eigen::Index n_ineq() const { return static_cast<Eigen::Index>(ineq_.size()); }
  Eigen::Index add_variable();

  using Terms = std::vector<std::pair<Eigen::Index, double>>;
  Eigen::Index add_ineq(Terms terms, double rhs, std::string label);
  Eigen::Index add_eq(Terms terms, double rhs, std::string label);

  // materializes A, b, E, f and the labels; P and q are left zero
  QpProblem finish() const;

 private:
  Eigen::Index n_vars_;
  struct Row {
    Terms terms;
    double rhs;
    std::string label;
  };
  std::vector<Row> ineq_, eq_;
};

// Worst case of expression row `row` over w in `box`, emitted as constraint
// rows over z:  max_w expr(z, w) <= upper_bound.  For w coordinates whose
// coefficient depends on z (bilinear terms) an auxiliary epigraph variable
// t >= |a_q(z)| is allocated; `shared_aux` lets the two senses of a range
// constraint reuse the same t.  Returns the index of the main inequality row.
Eigen::Index robustify_row(QpBuilder& builder, const AffineExpr& expr, Eigen::Index row,
                           const Box& box, double upper_bound, const std::string& label,
                           std::map<Eigen::Index, Eigen::Index>* shared_aux = nullptr);

// Both senses lo <= expr <= hi with shared epigraph variables; rows with an
// infinite bound on one side are skipped on that side.
void robustify_range(QpBuilder& builder, const AffineExpr& expr, Eigen::Index row, const Box& box,
                     double lo, double hi, const std::string& label);

struct ControlHistory {
  Eigen::VectorXd y_init;
  Eigen::VectorXd u_init;
  Eigen::VectorXd w_init;
};

// Forecast over the horizon: nominal trajectory plus a deviation box around it.
struct Forecast {
  Eigen::VectorXd w_bar;  // n_h * n_w
  Box deviation;          // n_h * n_w, or n_w replicated per step

  Box total(Eigen::Index n_h) const;  // w_bar + deviation, replicated if needed
};

struct ConstraintSets {
  Box u_set;  // n_u or n_h*n_u entries; sides may be infinite
  Box y_set;  // n_y or n_h*n_y entries; sides may be infinite
};

struct ObjectiveSpec {
  enum class Kind { tracking, input_l1 };
  Kind kind = Kind::tracking;
  Eigen::VectorXd y_ref;   // n_y or n_h*n_y (tracking only)
  double y_weight = 10.0;  // tracking: sum y_weight*(y - y_ref)^2
  double u_weight = 0.1;   // tracking: sum u_weight*u^2
  bool feedback = true;    // false forces the gain to zero
};

// Assembled single-level robust problem plus the bookkeeping needed to map a
// QP solution back to (u_nominal, K, y_nominal).
struct AssembledProblem {
  QpProblem qp;
  Eigen::Index n_h = 0, n_u = 0, n_w = 0, n_y = 0;
  Eigen::MatrixXi k_index;    // (n_h*n_u) x (n_h*n_w); -1 where masked
  Eigen::VectorXd w_center;   // center of the total uncertainty box
  Eigen::MatrixXd y_from_u;   // nominal output = y_const + y_from_u * u_nominal
  Eigen::VectorXd y_const;
  double objective_constant = 0.0;
  ObjectiveSpec::Kind objective_kind = ObjectiveSpec::Kind::tracking;
};

AssembledProblem assemble_problem(const KktFactor& factor, const HankelStack& stack,
                                  const ControlHistory& history, const Forecast& forecast,
                                  const ConstraintSets& sets, const ObjectiveSpec& objective);

// Same assembly for any affine horizon output map y = t0 + tu*u + tw*w, where
// u and w are the stacked horizon input/uncertainty vectors. This is the
// entry point for model-based predictors that want identical robustification.
AssembledProblem assemble_affine_control(const Eigen::VectorXd& t0, const Eigen::MatrixXd& tu,
                                         const Eigen::MatrixXd& tw, Eigen::Index n_h,
                                         Eigen::Index n_u, Eigen::Index n_w, Eigen::Index n_y,
                                         const Forecast& forecast, const ConstraintSets& sets,
                                         const ObjectiveSpec& objective);

struct ControlSolution {
  Eigen::VectorXd u_nominal;  // n_h*n_u, the input applied when w equals the box center
  Eigen::MatrixXd k_gain;     // (n_h*n_u) x (n_h*n_w), masked entries exactly zero
  Eigen::VectorXd w_center;
  Eigen::VectorXd y_nominal;  // n_h*n_y predicted output at the box center
  double objective_value = 0.0;
  int qp_iterations = 0;

  Eigen::VectorXd input_at(const Eigen::VectorXd& w_pred) const {
    return u_nominal + k_gain * (w_pred - w_center);
  }
};

// End-to-end: assemble, solve, and extract.  Throws InfeasibleError carrying
// the most violated tightened row when no robustly feasible plan exists.
ControlSolution solve_control(const KktFactor& factor, const HankelStack& stack,
                              const ControlHistory& history, const Forecast& forecast,
                              const ConstraintSets& sets, const ObjectiveSpec& objective,
                              const QpSettings& qp_settings = {});

// As above but reuses a previously assembled problem.
// Maps a non-optimal backend status to the matching exception, naming the
// most violated constraint row when infeasible.
void throw_if_not_optimal(const QpProblem& qp, const QpResult& result);

ControlSolution solve_assembled(const AssembledProblem& assembled,
                                const QpSettings& qp_settings = {});

}  // namespace rdpc
