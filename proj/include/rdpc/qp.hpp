#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace rdpc {

// Canonical convex QP:  min 0.5*z'Pz + q'z  s.t.  A z <= b,  E z = f.
struct QpProblem {
  Eigen::MatrixXd p;
  Eigen::VectorXd q;
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  Eigen::MatrixXd e;
  Eigen::VectorXd f;

  // Optional row labels for diagnostics; empty or one per row of A / E.
  std::vector<std::string> a_labels;
  std::vector<std::string> e_labels;

  Eigen::Index n() const { return q.size(); }
  Eigen::Index n_ineq() const { return b.size(); }
  Eigen::Index n_eq() const { return f.size(); }

  void validate() const;
};

enum class QpStatus { optimal, primal_infeasible, dual_infeasible, max_iterations };

const char* to_string(QpStatus s);

struct QpResult {
  QpStatus status = QpStatus::max_iterations;
  Eigen::VectorXd z;
  double objective = 0.0;       // 0.5 z'Pz + q'z at z
  Eigen::VectorXd y_ineq, y_eq; // multipliers (y_ineq >= 0)
  int iterations = 0;
  // worst KKT residuals at the returned point
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double comp_residual = 0.0;
  // infeasibility diagnostics
  Eigen::VectorXd certificate;  // Farkas-type ray in constraint space (primal infeasible)
  double max_violation = 0.0;
  Eigen::Index most_violated_row = -1;  // index into [eq rows; ineq rows]
};

struct QpSettings {
  double kkt_tol = 1e-7;     // required scale-relative residual level at the solution
  double eps_admm = 1e-6;    // operator-splitting termination before polishing
  double eps_infeas = 1e-9;
  int max_iterations = 50000;
  int check_interval = 25;
  double rho = 0.1;
  double rho_eq_scale = 1e3;
  double sigma = 1e-6;
  double alpha = 1.6;
  bool polish = true;
  int max_active_set_rounds = 200;
  // optional warm start (sizes must match; ignored otherwise)
  Eigen::VectorXd warm_z, warm_y_ineq, warm_y_eq;
};

QpResult solve_qp(const QpProblem& problem, const QpSettings& settings = {});

// Plain-text round trip: dimensions header, then dense P, q, A, b, E, f
// row-major at 17 significant digits.
void dump_qp(std::ostream& out, const QpProblem& problem);
void dump_qp(const std::string& path, const QpProblem& problem);
QpProblem load_qp(std::istream& in);
QpProblem load_qp(const std::string& path);

}  // namespace rdpc
