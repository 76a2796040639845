#include "rdpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "rdpc/errors.hpp"

namespace rdpc {

namespace {

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

// KKT residuals of (z, y_ineq, y_eq) on the original problem.  `score` is the
// single number used to compare candidate solutions; each term is divided by
// the matching problem scale (clamped at 1), so badly scaled objectives do
// not make the tolerance unreachable while O(1) problems keep absolute
// semantics.  The reported primal/dual/comp fields stay absolute.
struct KktResiduals {
  double primal = 0.0;
  double dual = 0.0;
  double comp = 0.0;
  double score = 0.0;
};

KktResiduals kkt_residuals(const QpProblem& pr, const Eigen::VectorXd& z,
                           const Eigen::VectorXd& y_ineq, const Eigen::VectorXd& y_eq) {
  KktResiduals r;
  Eigen::VectorXd grad = pr.p * z + pr.q;
  double dual_scale = std::max({1.0, inf_norm(pr.p * z), inf_norm(pr.q)});
  double primal_scale = 1.0, mult_scale = 1.0;
  if (pr.n_eq() > 0) {
    const Eigen::VectorXd ety = pr.e.transpose() * y_eq;
    grad += ety;
    dual_scale = std::max(dual_scale, inf_norm(ety));
    r.primal = inf_norm(pr.e * z - pr.f);
    primal_scale = std::max({primal_scale, inf_norm(pr.e * z), inf_norm(pr.f)});
  }
  Eigen::VectorXd slack;
  if (pr.n_ineq() > 0) {
    const Eigen::VectorXd aty = pr.a.transpose() * y_ineq;
    grad += aty;
    dual_scale = std::max(dual_scale, inf_norm(aty));
    slack = pr.a * z - pr.b;
    r.primal = std::max(r.primal, std::max(0.0, slack.maxCoeff()));
    primal_scale = std::max({primal_scale, inf_norm(pr.a * z), inf_norm(pr.b)});
    r.comp = (y_ineq.array() * slack.array()).abs().maxCoeff();
    mult_scale = std::max(1.0, inf_norm(y_ineq));
  }
  r.dual = inf_norm(grad);
  double dual_feas = pr.n_ineq() > 0 ? std::max(0.0, -y_ineq.minCoeff()) : 0.0;
  r.score = std::max({r.primal / primal_scale, r.dual / dual_scale, r.comp / mult_scale,
                      dual_feas / mult_scale});
  return r;
}

void fill_violation(const QpProblem& pr, const Eigen::VectorXd& z, QpResult* out) {
  out->max_violation = 0.0;
  out->most_violated_row = -1;
  for (Eigen::Index i = 0; i < pr.n_eq(); ++i) {
    double v = std::abs(pr.e.row(i).dot(z) - pr.f[i]);
    if (v > out->max_violation) {
      out->max_violation = v;
      out->most_violated_row = i;
    }
  }
  for (Eigen::Index i = 0; i < pr.n_ineq(); ++i) {
    double v = pr.a.row(i).dot(z) - pr.b[i];
    if (v > out->max_violation) {
      out->max_violation = v;
      out->most_violated_row = pr.n_eq() + i;
    }
  }
}

// Equality-constrained solve for the polishing step:
//   min 0.5 x'Px + q'x  s.t.  G x = d
// via the equilibrated, quasi-definite-regularized KKT system with iterative
// refinement against the unregularized system.  Equilibration keeps the fixed
// regularization meaningful whether P diagonals sit at 1e-1 or 1e8, and the
// refinement loop keeps the best iterate, so stalls cannot make things worse.
bool solve_eq_kkt(const Eigen::MatrixXd& p, const Eigen::VectorXd& q,
                  const Eigen::MatrixXd& g, const Eigen::VectorXd& d,
                  Eigen::VectorXd* x, Eigen::VectorXd* lambda) {
  const Eigen::Index n = q.size();
  const Eigen::Index mg = d.size();
  const Eigen::Index nm = n + mg;

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nm, nm);
  kkt.topLeftCorner(n, n) = p;
  if (mg > 0) {
    kkt.topRightCorner(n, mg) = g.transpose();
    kkt.bottomLeftCorner(mg, n) = g;
  }

  // symmetric Ruiz scaling, two sweeps
  Eigen::VectorXd dvec = Eigen::VectorXd::Ones(nm);
  Eigen::MatrixXd ks = kkt;
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index i = 0; i < nm; ++i) {
      double m = ks.row(i).cwiseAbs().maxCoeff();
      if (m > 1e-30) dvec[i] /= std::sqrt(m);
    }
    ks = dvec.asDiagonal() * kkt * dvec.asDiagonal();
  }
  const double reg = 1e-9;
  ks.diagonal().head(n).array() += reg;
  ks.diagonal().tail(mg).array() -= reg;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(ks);
  auto solve_scaled = [&](const Eigen::VectorXd& r) {
    return (dvec.asDiagonal() * lu.solve(dvec.cwiseProduct(r))).eval();
  };

  Eigen::VectorXd rhs(nm);
  rhs.head(n) = -q;
  rhs.tail(mg) = d;
  Eigen::VectorXd sol = solve_scaled(rhs);

  Eigen::VectorXd best = sol;
  double best_resid = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 8; ++it) {
    Eigen::VectorXd resid = rhs;
    resid.head(n) -= p * sol.head(n);
    if (mg > 0) {
      resid.head(n) -= g.transpose() * sol.tail(mg);
      resid.tail(mg) -= g * sol.head(n);
    }
    double rn = inf_norm(resid);
    if (sol.allFinite() && rn < best_resid) {
      best_resid = rn;
      best = sol;
    }
    if (rn <= 1e-13 * std::max(1.0, inf_norm(rhs))) break;
    sol += solve_scaled(resid);
  }
  if (!best.allFinite()) return false;
  *x = best.head(n);
  *lambda = best.tail(mg);
  return true;
}

}  // namespace

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::primal_infeasible: return "primal_infeasible";
    case QpStatus::dual_infeasible: return "dual_infeasible";
    case QpStatus::max_iterations: return "max_iterations";
  }
  return "unknown";
}

void QpProblem::validate() const {
  const Eigen::Index nz = n();
  if (nz < 1) throw DimensionError("qp: empty decision vector");
  if (p.rows() != nz || p.cols() != nz) throw DimensionError("qp: P must be n x n");
  double scale = std::max(1.0, p.cwiseAbs().maxCoeff());
  if ((p - p.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw ConfigError("qp: P must be symmetric");
  if (n_ineq() > 0 && (a.rows() != n_ineq() || a.cols() != nz))
    throw DimensionError("qp: A/b shape mismatch");
  if (n_eq() > 0 && (e.rows() != n_eq() || e.cols() != nz))
    throw DimensionError("qp: E/f shape mismatch");
  if (!a_labels.empty() && static_cast<Eigen::Index>(a_labels.size()) != n_ineq())
    throw DimensionError("qp: inequality label count mismatch");
  if (!e_labels.empty() && static_cast<Eigen::Index>(e_labels.size()) != n_eq())
    throw DimensionError("qp: equality label count mismatch");
  if (!p.allFinite() || !q.allFinite() || (n_ineq() > 0 && (!a.allFinite() || !b.allFinite())) ||
      (n_eq() > 0 && (!e.allFinite() || !f.allFinite())))
    throw ConfigError("qp: non-finite problem data");
}

QpResult solve_qp(const QpProblem& problem, const QpSettings& settings) {
  problem.validate();
  const Eigen::Index n = problem.n();
  const Eigen::Index me = problem.n_eq();
  const Eigen::Index mi = problem.n_ineq();
  const Eigen::Index m = me + mi;
  const double inf = std::numeric_limits<double>::infinity();

  Eigen::MatrixXd p = 0.5 * (problem.p + problem.p.transpose());

  // stacked one-sided form: c z in [lo, hi], equalities first
  Eigen::MatrixXd c(m, n);
  Eigen::VectorXd lo(m), hi(m);
  if (me > 0) {
    c.topRows(me) = problem.e;
    lo.head(me) = problem.f;
    hi.head(me) = problem.f;
  }
  if (mi > 0) {
    c.bottomRows(mi) = problem.a;
    lo.tail(mi).setConstant(-inf);
    hi.tail(mi) = problem.b;
  }

  double rho_base = settings.rho;
  Eigen::VectorXd rho(m);
  auto set_rho = [&]() {
    rho.head(me).setConstant(rho_base * settings.rho_eq_scale);
    rho.tail(mi).setConstant(rho_base);
  };
  set_rho();

  Eigen::LLT<Eigen::MatrixXd> llt;
  auto factorize = [&]() {
    Eigen::MatrixXd k = p;
    k.diagonal().array() += settings.sigma;
    if (m > 0) k.noalias() += c.transpose() * rho.asDiagonal() * c;
    llt.compute(k);
    if (llt.info() != Eigen::Success)
      throw FactorizationError("qp: cost matrix is not positive semidefinite");
  };
  factorize();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  if (settings.warm_z.size() == n && settings.warm_z.allFinite()) x = settings.warm_z;
  Eigen::VectorXd zc = c * x;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  if (settings.warm_y_eq.size() == me && settings.warm_y_ineq.size() == mi) {
    y.head(me) = settings.warm_y_eq;
    y.tail(mi) = settings.warm_y_ineq.cwiseMax(0.0);
  }

  QpResult out;
  out.z = x;
  Eigen::VectorXd x_prev = x, y_prev = y;
  const double eps = settings.eps_admm;
  bool converged = false;
  int iter = 0;

  // best candidate seen so far, judged on the original problem data
  KktResiduals best;
  Eigen::VectorXd best_z, best_yi, best_ye;
  auto consider = [&](const Eigen::VectorXd& z, const Eigen::VectorXd& yi,
                      const Eigen::VectorXd& ye) {
    const KktResiduals cand = kkt_residuals(problem, z, yi, ye);
    if (best_z.size() == 0 || cand.score < best.score) {
      best = cand;
      best_z = z;
      best_yi = yi;
      best_ye = ye;
    }
  };

  // active-set refinement seeded from a splitting iterate.  Cheap relative to
  // the splitting tail, so it also runs on a doubling schedule inside the
  // loop: near-degenerate problems (flat curvature, weakly-active rows) creep
  // at 1e-4..1e-5 for tens of thousands of iterations, while the active set
  // is already identifiable long before that.
  // One active-set refinement from a seed set.  Weakly active rows make the
  // optimal set ambiguous, so every round's candidate is scored, a one-step
  // drop memory breaks two-cycles, and the caller retries with widening seed
  // cutoffs.
  auto refine_active_set = [&](std::vector<Eigen::Index> active) {
    const double move_tol = 0.5 * settings.kkt_tol;
    Eigen::Index last_dropped = -1;
    // degenerate faces can make worst-first pivoting cycle; when a working set
    // repeats, fall back to least-index selection, which cannot cycle
    std::set<std::vector<Eigen::Index>> seen;
    bool least_index = false;
    for (int round = 0; round < settings.max_active_set_rounds; ++round) {
      {
        std::vector<Eigen::Index> key = active;
        std::sort(key.begin(), key.end());
        if (!seen.insert(std::move(key)).second) least_index = true;
      }
      const Eigen::Index na = static_cast<Eigen::Index>(active.size());
      Eigen::MatrixXd g(me + na, n);
      Eigen::VectorXd d(me + na);
      if (me > 0) {
        g.topRows(me) = problem.e;
        d.head(me) = problem.f;
      }
      for (Eigen::Index k = 0; k < na; ++k) {
        g.row(me + k) = problem.a.row(active[k]);
        d[me + k] = problem.b[active[k]];
      }
      Eigen::VectorXd px, lambda;
      if (!solve_eq_kkt(p, problem.q, g, d, &px, &lambda)) return;

      Eigen::VectorXd yi = Eigen::VectorXd::Zero(mi);
      for (Eigen::Index k = 0; k < na; ++k) yi[active[k]] = std::max(0.0, lambda[me + k]);
      consider(px, yi, lambda.head(me));

      // drop the worst negative multiplier, else add the worst violated row
      // (least-index selection once a cycle was detected)
      const double lam_scale = std::max(1.0, inf_norm(lambda));
      Eigen::Index drop = -1;
      double worst = -move_tol * lam_scale;
      for (Eigen::Index k = 0; k < na; ++k)
        if (lambda[me + k] < worst) {
          worst = lambda[me + k];
          drop = k;
          if (least_index) break;
        }
      if (drop >= 0) {
        last_dropped = active[drop];
        active.erase(active.begin() + drop);
        continue;
      }
      Eigen::Index add = -1;
      double worst_v = 0.0;
      for (Eigen::Index i = 0; i < mi; ++i) {
        if (i == last_dropped && !least_index) continue;
        if (std::find(active.begin(), active.end(), i) != active.end()) continue;
        const double v = problem.a.row(i).dot(px) - problem.b[i];
        const double tol = move_tol * (1.0 + std::abs(problem.b[i]));
        if (v > tol && v > worst_v) {
          worst_v = v;
          add = i;
          if (least_index) break;
        }
      }
      if (add >= 0) {
        active.push_back(add);
        std::sort(active.begin(), active.end());
        last_dropped = -1;
        continue;
      }
      return;
    }
  };

  auto polish_pass = [&](const Eigen::VectorXd& xs, const Eigen::VectorXd& ys) {
    const double yscale = std::max(1.0, inf_norm(ys));
    const Eigen::VectorXd slack = mi > 0 ? (problem.b - problem.a * xs).eval() : Eigen::VectorXd();
    for (const double slack_cut : {1e-6, 1e-4}) {
      std::vector<Eigen::Index> active;
      for (Eigen::Index i = 0; i < mi; ++i)
        if (ys[me + i] > 1e-7 * yscale || slack[i] <= slack_cut * (1.0 + std::abs(problem.b[i])))
          active.push_back(i);
      refine_active_set(std::move(active));
      if (best_z.size() > 0 && best.score <= settings.kkt_tol) return;
    }
  };

  auto finish = [&]() {
    out.z = best_z;
    out.y_ineq = best_yi;
    out.y_eq = best_ye;
    out.primal_residual = best.primal;
    out.dual_residual = best.dual;
    out.comp_residual = best.comp;
    out.objective = 0.5 * best_z.dot(problem.p * best_z) + problem.q.dot(best_z);
    out.status = best.score <= settings.kkt_tol ? QpStatus::optimal : QpStatus::max_iterations;
    fill_violation(problem, best_z, &out);
    return out;
  };

  int next_polish = settings.check_interval * 16;

  for (; iter < settings.max_iterations; ++iter) {
    Eigen::VectorXd rhs = settings.sigma * x - problem.q;
    if (m > 0) rhs.noalias() += c.transpose() * (rho.cwiseProduct(zc) - y);
    Eigen::VectorXd x_tilde = llt.solve(rhs);
    Eigen::VectorXd z_tilde = c * x_tilde;
    x = settings.alpha * x_tilde + (1.0 - settings.alpha) * x;
    if (m > 0) {
      Eigen::VectorXd v = settings.alpha * z_tilde + (1.0 - settings.alpha) * zc +
                          y.cwiseQuotient(rho);
      zc = v.cwiseMax(lo).cwiseMin(hi);
      y = rho.cwiseProduct(v - zc);
    }

    if ((iter + 1) % settings.check_interval != 0) continue;

    Eigen::VectorXd cx = c * x;
    double r_prim = inf_norm(cx - zc);
    Eigen::VectorXd grad = p * x + problem.q;
    if (m > 0) grad.noalias() += c.transpose() * y;
    double r_dual = inf_norm(grad);
    double prim_scale = std::max({inf_norm(cx), inf_norm(zc), 1e-30});
    double dual_scale =
        std::max({inf_norm(p * x), inf_norm(problem.q), m > 0 ? inf_norm(c.transpose() * y) : 0.0,
                  1e-30});
    if (r_prim <= eps * (1.0 + prim_scale) && r_dual <= eps * (1.0 + dual_scale)) {
      converged = true;
      ++iter;
      break;
    }

    // divergence certificates from the accumulated step directions
    Eigen::VectorXd dy = y - y_prev;
    Eigen::VectorXd dx = x - x_prev;
    double ny = inf_norm(dy);
    if (m > 0 && ny > 1e-12) {
      double tol = settings.eps_infeas * ny;
      bool ray = inf_norm(c.transpose() * dy) <= tol;
      double support = 0.0;
      for (Eigen::Index i = 0; i < m && ray; ++i) {
        double up = std::max(dy[i], 0.0), dn = std::min(dy[i], 0.0);
        if (lo[i] == -inf && dn < -tol) ray = false;
        support += hi[i] * up + (lo[i] == -inf ? 0.0 : lo[i] * dn);
      }
      if (ray && support <= -tol) {
        out.status = QpStatus::primal_infeasible;
        out.z = x;
        out.iterations = iter + 1;
        out.certificate = dy / ny;
        out.y_eq = y.head(me);
        out.y_ineq = y.tail(mi).cwiseMax(0.0);
        fill_violation(problem, x, &out);
        out.objective = 0.5 * x.dot(problem.p * x) + problem.q.dot(x);
        return out;
      }
    }
    double nx = inf_norm(dx);
    if (nx > 1e-12) {
      double tol = settings.eps_infeas * nx;
      bool ray = inf_norm(p * dx) <= tol && problem.q.dot(dx) <= -tol;
      for (Eigen::Index i = 0; i < m && ray; ++i) {
        double cdx = c.row(i).dot(dx);
        if (lo[i] == -inf ? cdx > tol : std::abs(cdx) > tol) ray = false;
      }
      if (ray) {
        out.status = QpStatus::dual_infeasible;
        out.z = x;
        out.iterations = iter + 1;
        out.certificate = dx / nx;
        out.y_eq = y.head(me);
        out.y_ineq = y.tail(mi).cwiseMax(0.0);
        fill_violation(problem, x, &out);
        out.objective = 0.5 * x.dot(problem.p * x) + problem.q.dot(x);
        return out;
      }
    }
    x_prev = x;
    y_prev = y;

    // deterministic step-size rebalancing
    if ((iter + 1) % (settings.check_interval * 8) == 0) {
      double rp_rel = r_prim / prim_scale;
      double rd_rel = r_dual / dual_scale;
      double ratio = std::sqrt(rp_rel / std::max(rd_rel, 1e-30));
      ratio = std::clamp(ratio, 0.1, 10.0);
      if (ratio > 5.0 || ratio < 0.2) {
        rho_base = std::clamp(rho_base * ratio, 1e-6, 1e6);
        set_rho();
        factorize();
      }
    }

    if (settings.polish && iter + 1 >= next_polish) {
      next_polish *= 2;
      polish_pass(x, y);
      if (best_z.size() > 0 && best.score <= settings.kkt_tol) {
        out.iterations = iter + 1;
        return finish();
      }
    }
  }

  out.iterations = iter;
  consider(x, y.tail(mi).cwiseMax(0.0), y.head(me));
  if (settings.polish && (converged || best.score > settings.kkt_tol)) polish_pass(x, y);
  return finish();
}

namespace {

void write_matrix(std::ostream& out, const char* name, const Eigen::MatrixXd& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix(std::istream& in, const std::string& name) {
  std::string tag;
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> tag >> rows >> cols) || tag != name || rows < 0 || cols < 0)
    throw ConfigError("qp file: malformed '" + name + "' block");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      if (!(in >> m(i, j))) throw ConfigError("qp file: truncated '" + name + "' block");
  return m;
}

}  // namespace

void dump_qp(std::ostream& out, const QpProblem& problem) {
  problem.validate();
  out << std::setprecision(17);
  out << "rdpc-qp 1\n";
  out << "n " << problem.n() << " ineq " << problem.n_ineq() << " eq " << problem.n_eq() << '\n';
  write_matrix(out, "P", problem.p);
  write_matrix(out, "q", problem.q.transpose());
  write_matrix(out, "A", problem.n_ineq() > 0 ? problem.a : Eigen::MatrixXd(0, problem.n()));
  write_matrix(out, "b", problem.b.transpose());
  write_matrix(out, "E", problem.n_eq() > 0 ? problem.e : Eigen::MatrixXd(0, problem.n()));
  write_matrix(out, "f", problem.f.transpose());
}

void dump_qp(const std::string& path, const QpProblem& problem) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  dump_qp(out, problem);
}

QpProblem load_qp(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "rdpc-qp" || version != 1)
    throw ConfigError("qp file: bad header");
  std::string kn, ki, ke;
  Eigen::Index n = 0, mi = 0, me = 0;
  if (!(in >> kn >> n >> ki >> mi >> ke >> me) || kn != "n" || ki != "ineq" || ke != "eq")
    throw ConfigError("qp file: bad dimension line");
  QpProblem pr;
  pr.p = read_matrix(in, "P");
  pr.q = read_matrix(in, "q").transpose();
  pr.a = read_matrix(in, "A");
  pr.b = read_matrix(in, "b").transpose();
  pr.e = read_matrix(in, "E");
  pr.f = read_matrix(in, "f").transpose();
  if (pr.n() != n || pr.n_ineq() != mi || pr.n_eq() != me)
    throw ConfigError("qp file: dimensions disagree with header");
  pr.validate();
  return pr;
}

QpProblem load_qp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path);
  return load_qp(in);
}

}  // namespace rdpc
