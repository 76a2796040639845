#include <cmath>
#include <cstring>
#include <deque>
#include <limits>

#include <doctest.h>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "rdpc/errors.hpp"
#include "rdpc/robust.hpp"

using namespace rdpc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd vec1(double v) { return Eigen::VectorXd::Constant(1, v); }

struct ControlSetup {
  HankelStack stack;
  KktFactor factor;
  Eigen::VectorXd e_g;
  ControlHistory history;
};

// offline data from one rollout, history from the tail of an independent one
ControlSetup make_setup(Eigen::Index t_init, Eigen::Index n_h, std::uint64_t seed,
                        double e_g_value = 1e-6, Eigen::Index t = 40, double hist_amp = 0.1) {
  const oracles::TestPlant plant = oracles::second_order_plant();
  Dataset data = oracles::excited_dataset(plant, t, seed, 0.8, 0.3);
  ControlSetup s{build_stack(data, t_init, n_h), KktFactor{}, Eigen::VectorXd(), ControlHistory{}};
  s.e_g = RegularizerWeights::constant(s.stack.n_c, e_g_value).e_g;
  s.factor = factorize_kkt(s.stack, RegularizerWeights::constant(s.stack.n_c, e_g_value));

  Dataset recent = oracles::excited_dataset(plant, t_init + 6, seed + 1000, hist_amp, hist_amp);
  const Eigen::Index n0 = recent.size() - t_init;
  s.history.y_init.resize(t_init);
  s.history.u_init.resize(t_init);
  s.history.w_init.resize(t_init);
  for (Eigen::Index i = 0; i < t_init; ++i) {
    s.history.u_init[i] = recent.u_at(n0 + i)[0];
    s.history.w_init[i] = recent.w_at(n0 + i)[0];
    s.history.y_init[i] = recent.y_at(n0 + i)[0];
  }
  return s;
}

Forecast zero_forecast(Eigen::Index n_h, double halfwidth) {
  Forecast f;
  f.w_bar = Eigen::VectorXd::Zero(n_h);
  f.deviation = Box::centered(vec1(0.0), vec1(halfwidth));
  return f;
}

ConstraintSets paper_sets() {
  return {Box(vec1(-10.0), vec1(10.0)), Box(vec1(-2.0), vec1(0.5))};
}

ObjectiveSpec tracking_objective(double ref) {
  ObjectiveSpec obj;
  obj.kind = ObjectiveSpec::Kind::tracking;
  obj.y_ref = vec1(ref);
  obj.y_weight = 10.0;
  obj.u_weight = 0.1;
  return obj;
}

}  // namespace

TEST_SUITE("robust") {
  TEST_CASE("causality mask shape") {
    BoolMatrix m1 = causality_mask(1, 2, 3);
    CHECK(m1.rows() == 2);
    CHECK(m1.cols() == 3);
    CHECK_FALSE(m1.any());

    BoolMatrix m3 = causality_mask(3, 1, 1);
    BoolMatrix expected(3, 3);
    expected << false, false, false, true, false, false, true, true, false;
    CHECK((m3.array() == expected.array()).all());

    for (auto [n_h, n_u, n_w] : {std::array<Eigen::Index, 3>{4, 2, 3},
                                 std::array<Eigen::Index, 3>{6, 1, 2},
                                 std::array<Eigen::Index, 3>{2, 3, 1}}) {
      BoolMatrix m = causality_mask(n_h, n_u, n_w);
      CHECK(m.cast<int>().sum() == n_u * n_w * n_h * (n_h - 1) / 2);
      CHECK_FALSE(m.topRows(n_u).any());
    }
    CHECK_THROWS_AS(causality_mask(0, 1, 1), DimensionError);
  }

  TEST_CASE("affine expression evaluates exactly") {
    Rng rng(31);
    AffineExpr expr;
    const Eigen::Index rows = 3, nd = 4, nu = 2;
    expr.constant = Eigen::VectorXd::NullaryExpr(rows, [&](Eigen::Index) { return rng.normal(); });
    expr.coeff_dec =
        Eigen::MatrixXd::NullaryExpr(rows, nd, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    expr.coeff_unc =
        Eigen::MatrixXd::NullaryExpr(rows, nu, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    expr.bilinear = {{0, 1, 2, 0.5}, {3, 0, 1, -2.0}};

    Eigen::VectorXd z = Eigen::VectorXd::NullaryExpr(nd, [&](Eigen::Index) { return rng.normal(); });
    Eigen::VectorXd w = Eigen::VectorXd::NullaryExpr(nu, [&](Eigen::Index) { return rng.normal(); });
    Eigen::VectorXd direct = expr.constant + expr.coeff_dec * z + expr.coeff_unc * w;
    direct[2] += 0.5 * z[0] * w[1];
    direct[1] += -2.0 * z[3] * w[0];
    CHECK((expr.evaluate(z, w) - direct).cwiseAbs().maxCoeff() == 0.0);

    expr.bilinear.push_back({9, 0, 0, 1.0});
    CHECK_THROWS_AS(expr.validate(), DimensionError);
  }

  TEST_CASE("pure uncertainty row tightens to a constant") {
    // w_1 - 2 w_2 <= 4 over [-1,1]^2 -> worst case 3, emitted as 0'z <= 1
    AffineExpr expr;
    expr.constant = Eigen::VectorXd::Zero(1);
    expr.coeff_dec = Eigen::MatrixXd::Zero(1, 1);
    expr.coeff_unc = Eigen::MatrixXd(1, 2);
    expr.coeff_unc << 1.0, -2.0;

    QpBuilder builder(1);
    Box box(Eigen::VectorXd::Constant(2, -1.0), Eigen::VectorXd::Constant(2, 1.0));
    robustify_row(builder, expr, 0, box, 4.0, "row");
    QpProblem qp = builder.finish();
    REQUIRE(qp.n_ineq() == 1);
    CHECK(qp.a.row(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(qp.b[0] == doctest::Approx(1.0));
  }

  TEST_CASE("certain row passes through unchanged") {
    AffineExpr expr;
    expr.constant = Eigen::VectorXd::Zero(1);
    expr.coeff_dec = Eigen::MatrixXd::Constant(1, 1, 1.0);
    expr.coeff_unc = Eigen::MatrixXd::Zero(1, 2);

    QpBuilder builder(1);
    Box box(Eigen::VectorXd::Constant(2, -1.0), Eigen::VectorXd::Constant(2, 1.0));
    robustify_row(builder, expr, 0, box, 1.5, "row");
    QpProblem qp = builder.finish();
    REQUIRE(qp.n_ineq() == 1);
    CHECK(qp.n() == 1);  // no auxiliary variables
    CHECK(qp.a(0, 0) == 1.0);
    CHECK(qp.b[0] == 1.5);
  }

  TEST_CASE("tightening equals the vertex maximum without bilinear terms") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(500 + seed);
      const Eigen::Index nu = 1 + static_cast<Eigen::Index>(seed % 10);
      AffineExpr expr;
      expr.constant = vec1(rng.normal());
      expr.coeff_dec = Eigen::MatrixXd::Zero(1, 1);
      expr.coeff_unc =
          Eigen::MatrixXd::NullaryExpr(1, nu, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
      Eigen::VectorXd center(nu), halfwidth(nu);
      for (Eigen::Index i = 0; i < nu; ++i) {
        center[i] = rng.normal();
        halfwidth[i] = rng.uniform(0.0, 2.0);
      }
      Box box = Box::centered(center, halfwidth);

      QpBuilder builder(1);
      const double bound = rng.normal();
      robustify_row(builder, expr, 0, box, bound, "row");
      QpProblem qp = builder.finish();

      double worst = -kInf;
      oracles::visit_vertices(box, [&](const Eigen::VectorXd& v) {
        worst = std::max(worst, expr.evaluate(Eigen::VectorXd::Zero(1), v)[0]);
      });
      // emitted row: 0'z <= bound - worst
      CHECK(qp.b[0] == doctest::Approx(bound - worst).epsilon(1e-12));
    }
  }

  TEST_CASE("tightening equals the vertex maximum with bilinear terms") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(700 + seed);
      const Eigen::Index nd = 3, nu = 4;
      AffineExpr expr;
      expr.constant = vec1(rng.normal());
      expr.coeff_dec =
          Eigen::MatrixXd::NullaryExpr(1, nd, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
      expr.coeff_unc =
          Eigen::MatrixXd::NullaryExpr(1, nu, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
      for (int k = 0; k < 6; ++k)
        expr.bilinear.push_back({static_cast<Eigen::Index>(rng.uniform(0.0, 1.0) * nd),
                                 static_cast<Eigen::Index>(rng.uniform(0.0, 1.0) * nu), 0,
                                 rng.normal()});
      Eigen::VectorXd center(nu), halfwidth(nu);
      for (Eigen::Index i = 0; i < nu; ++i) {
        center[i] = rng.normal();
        halfwidth[i] = rng.uniform(0.0, 1.5);
      }
      Box box = Box::centered(center, halfwidth);

      QpBuilder builder(nd);
      const double bound = rng.normal();
      robustify_row(builder, expr, 0, box, bound, "row");
      QpProblem qp = builder.finish();
      const Eigen::Index main_row = qp.n_ineq() - 1;

      for (int trial = 0; trial < 5; ++trial) {
        Eigen::VectorXd z0 =
            Eigen::VectorXd::NullaryExpr(nd, [&](Eigen::Index) { return rng.normal(); });
        // minimal feasible epigraph values: each t is pinned by its two
        // defining rows (the only rows where it carries coefficient -1)
        Eigen::VectorXd full = Eigen::VectorXd::Zero(qp.n());
        full.head(nd) = z0;
        for (Eigen::Index col = nd; col < qp.n(); ++col) {
          double needed = -kInf;
          for (Eigen::Index row = 0; row < qp.n_ineq(); ++row) {
            if (qp.a(row, col) != -1.0) continue;
            double lhs = qp.a.row(row).head(nd).dot(z0);
            needed = std::max(needed, lhs - qp.b[row]);
          }
          full[col] = needed;
        }
        double worst = -kInf;
        oracles::visit_vertices(box, [&](const Eigen::VectorXd& v) {
          worst = std::max(worst, expr.evaluate(z0, v)[0]);
        });
        const double lhs = qp.a.row(main_row).dot(full);
        CHECK(lhs - qp.b[main_row] == doctest::Approx(worst - bound).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("range constraints share epigraph variables") {
    AffineExpr expr;
    expr.constant = Eigen::VectorXd::Zero(1);
    expr.coeff_dec = Eigen::MatrixXd::Constant(1, 2, 0.0);
    expr.coeff_unc = Eigen::MatrixXd::Constant(1, 1, 0.3);
    expr.bilinear = {{1, 0, 0, 1.0}};
    Box box = Box::centered(vec1(0.0), vec1(0.4));

    QpBuilder builder(2);
    robustify_range(builder, expr, 0, box, -1.0, 1.0, "row");
    QpProblem qp = builder.finish();
    CHECK(qp.n() == 3);        // one shared t for both senses
    CHECK(qp.n_ineq() == 4);   // two abs rows + two main rows
  }

  TEST_CASE("infinite bounds are skipped") {
    AffineExpr expr;
    expr.constant = Eigen::VectorXd::Zero(1);
    expr.coeff_dec = Eigen::MatrixXd::Constant(1, 1, 1.0);
    expr.coeff_unc = Eigen::MatrixXd::Zero(1, 1);
    Box box = Box::centered(vec1(0.0), vec1(1.0));
    QpBuilder builder(1);
    robustify_range(builder, expr, 0, box, -kInf, 2.0, "row");
    QpProblem qp = builder.finish();
    CHECK(qp.n_ineq() == 1);
    CHECK_THROWS_AS(robustify_row(builder, expr, 0, box, kInf, "row"), ConfigError);
  }

  TEST_CASE("point uncertainty with fixed gain reduces to the nominal problem") {
    ControlSetup s = make_setup(4, 4, 21);
    Forecast f;
    f.w_bar.resize(4);
    f.w_bar << 0.1, -0.05, 0.2, 0.0;
    f.deviation = Box::centered(vec1(0.0), vec1(0.0));
    ConstraintSets sets{Box(vec1(-10.0), vec1(10.0)), Box(vec1(-5.0), vec1(5.0))};
    ObjectiveSpec obj = tracking_objective(-0.5);
    obj.feedback = false;

    ControlSolution sol = solve_control(s.factor, s.stack, s.history, f, sets, obj);

    // hand-built nominal problem over u alone
    AffinePredictor pred =
        affine_predictor(s.factor, s.history.y_init, s.history.u_init, s.history.w_init);
    Eigen::MatrixXd tu = s.stack.y_pred * pred.g_u;
    Eigen::VectorXd d = s.stack.y_pred * (pred.g0 + pred.g_w * f.w_bar);
    const Eigen::Index nu = 4;
    QpProblem nominal;
    nominal.p = 2.0 * (10.0 * tu.transpose() * tu + 0.1 * Eigen::MatrixXd::Identity(nu, nu));
    Eigen::VectorXd ref = Eigen::VectorXd::Constant(4, -0.5);
    nominal.q = 2.0 * 10.0 * tu.transpose() * (d - ref);
    nominal.a = Eigen::MatrixXd(2 * nu + 8, nu);
    nominal.b = Eigen::VectorXd(2 * nu + 8);
    nominal.a.topRows(nu) = Eigen::MatrixXd::Identity(nu, nu);
    nominal.b.head(nu).setConstant(10.0);
    nominal.a.middleRows(nu, nu) = -Eigen::MatrixXd::Identity(nu, nu);
    nominal.b.segment(nu, nu).setConstant(10.0);
    nominal.a.middleRows(2 * nu, 4) = tu;
    nominal.b.segment(2 * nu, 4) = Eigen::VectorXd::Constant(4, 5.0) - d;
    nominal.a.bottomRows(4) = -tu;
    nominal.b.tail(4) = d + Eigen::VectorXd::Constant(4, 5.0);
    QpResult direct = solve_qp(nominal);
    REQUIRE(direct.status == QpStatus::optimal);

    CHECK((sol.u_nominal - direct.z).cwiseAbs().maxCoeff() < 1e-6);
    double expected_obj =
        direct.objective + 10.0 * (d - ref).squaredNorm();
    CHECK(sol.objective_value == doctest::Approx(expected_obj).epsilon(1e-7));
    CHECK(sol.k_gain.cwiseAbs().maxCoeff() == 0.0);

    // lower-level re-solve at the nominal disturbance reproduces y_nominal
    Eigen::VectorXd g = solve_lower(s.factor, s.history.y_init, s.history.u_init,
                                    s.history.w_init, sol.u_nominal, f.w_bar);
    CHECK((predict(s.stack, g) - sol.y_nominal).cwiseAbs().maxCoeff() < 1e-8);
  }

  TEST_CASE("unbounded output set is feasible for any history") {
    for (std::uint64_t seed : {3u, 4u, 5u}) {
      ControlSetup s = make_setup(4, 4, seed, 1e-6, 40, 0.6);
      ConstraintSets sets{Box(vec1(-10.0), vec1(10.0)), Box(vec1(-kInf), vec1(kInf))};
      ControlSolution sol = solve_control(s.factor, s.stack, s.history, zero_forecast(4, 0.1),
                                          sets, tracking_objective(-0.5));
      CHECK(sol.u_nominal.cwiseAbs().maxCoeff() <= 10.0 + 1e-7);
    }
  }

  TEST_CASE("solutions are robustly feasible at every uncertainty vertex") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
      ControlSetup s = make_setup(4, 4, seed);
      Forecast f = zero_forecast(4, 0.1);
      ConstraintSets sets{Box(vec1(-2.0), vec1(2.0)), Box(vec1(-3.0), vec1(1.5))};
      ControlSolution sol = solve_control(s.factor, s.stack, s.history, f, sets,
                                          tracking_objective(-0.8));

      const Box wbox = f.total(4);
      oracles::visit_vertices(wbox, [&](const Eigen::VectorXd& wv) {
        Eigen::VectorXd u = sol.input_at(wv);
        CHECK(u.maxCoeff() <= 2.0 + 1e-6);
        CHECK(u.minCoeff() >= -2.0 - 1e-6);
        // independent dense lower-level chain for the realized output
        Eigen::VectorXd r2(s.stack.h_rows());
        r2 << s.history.u_init, s.history.w_init, u, wv;
        oracles::DenseLowerSolution ref =
            oracles::dense_lower_solve(s.stack, s.e_g, s.history.y_init, r2);
        Eigen::VectorXd y = s.stack.y_pred * ref.g;
        CHECK(y.maxCoeff() <= 1.5 + 1e-6);
        CHECK(y.minCoeff() >= -3.0 - 1e-6);
      });

      // causality: first block row and everything on/above the diagonal is zero
      BoolMatrix mask = causality_mask(4, 1, 1);
      for (Eigen::Index p = 0; p < 4; ++p)
        for (Eigen::Index q = 0; q < 4; ++q)
          if (!mask(p, q)) CHECK(sol.k_gain(p, q) == 0.0);
    }
  }

  TEST_CASE("objective is monotone in the uncertainty width") {
    ControlSetup s = make_setup(4, 4, 31);
    ConstraintSets sets{Box(vec1(-2.0), vec1(2.0)), Box(vec1(-3.0), vec1(1.2))};
    ObjectiveSpec obj = tracking_objective(-0.8);
    double prev = -kInf;
    for (double width : {0.01, 0.08, 0.2}) {
      ControlSolution sol =
          solve_control(s.factor, s.stack, s.history, zero_forecast(4, width), sets, obj);
      CHECK(sol.objective_value >= prev - 1e-6);
      prev = sol.objective_value;
    }
  }

  TEST_CASE("over-wide uncertainty reports the violated row") {
    ControlSetup s = make_setup(4, 4, 31);
    ConstraintSets sets = paper_sets();

    // without feedback the full disturbance response must fit the output box
    ObjectiveSpec open_loop = tracking_objective(-0.5);
    open_loop.feedback = false;
    try {
      solve_control(s.factor, s.stack, s.history, zero_forecast(4, 5.0), sets, open_loop);
      FAIL("expected infeasibility without feedback");
    } catch (const InfeasibleError& err) {
      CHECK(!err.worst_row.empty());
      CHECK(err.max_violation > 0.0);
    }

    // with feedback only the one-step-delay response is uncancellable; widen
    // until even that exceeds the output box
    try {
      solve_control(s.factor, s.stack, s.history, zero_forecast(4, 60.0), sets,
                    tracking_objective(-0.5));
      FAIL("expected infeasibility with feedback");
    } catch (const InfeasibleError& err) {
      CHECK(!err.worst_row.empty());
    }
  }

  TEST_CASE("bisection brackets the feasibility boundary") {
    ControlSetup s = make_setup(4, 4, 31);
    ConstraintSets sets = paper_sets();
    ObjectiveSpec obj = tracking_objective(-0.5);
    obj.feedback = false;

    auto feasible = [&](double width) {
      try {
        solve_control(s.factor, s.stack, s.history, zero_forecast(4, width), sets, obj);
        return true;
      } catch (const InfeasibleError&) {
        return false;
      }
    };
    double lo = 0.05, hi = 5.0;
    REQUIRE(feasible(lo));
    REQUIRE(!feasible(hi));
    for (int it = 0; it < 10; ++it) {
      double mid = 0.5 * (lo + hi);
      (feasible(mid) ? lo : hi) = mid;
    }
    CHECK(lo > 0.05);
    CHECK(hi < 5.0);
    CHECK(feasible(lo - 0.02));
    CHECK(!feasible(hi + 0.02));
  }

  TEST_CASE("repeated solves are bitwise identical") {
    ControlSetup s = make_setup(4, 4, 77);
    ConstraintSets sets{Box(vec1(-2.0), vec1(2.0)), Box(vec1(-3.0), vec1(1.5))};
    ControlSolution a = solve_control(s.factor, s.stack, s.history, zero_forecast(4, 0.1), sets,
                                      tracking_objective(-0.5));
    ControlSolution b = solve_control(s.factor, s.stack, s.history, zero_forecast(4, 0.1), sets,
                                      tracking_objective(-0.5));
    CHECK(std::memcmp(a.u_nominal.data(), b.u_nominal.data(),
                      sizeof(double) * a.u_nominal.size()) == 0);
    CHECK(std::memcmp(a.k_gain.data(), b.k_gain.data(), sizeof(double) * a.k_gain.size()) == 0);
    CHECK(a.objective_value == b.objective_value);
  }

  TEST_CASE("input energy objective keeps the input at the lower bound") {
    ControlSetup s = make_setup(4, 4, 41);
    ConstraintSets sets{Box(vec1(0.0), vec1(10.0)), Box(vec1(-50.0), vec1(50.0))};
    ObjectiveSpec obj;
    obj.kind = ObjectiveSpec::Kind::input_l1;
    ControlSolution sol =
        solve_control(s.factor, s.stack, s.history, zero_forecast(4, 0.05), sets, obj);
    CHECK(sol.u_nominal.cwiseAbs().maxCoeff() < 1e-6);
    CHECK(sol.objective_value == doctest::Approx(0.0).epsilon(1e-6));
  }

  TEST_CASE("closed loop tracks the reference within the robustness margin") {
    const oracles::TestPlant plant = oracles::second_order_plant();
    const Eigen::Index t_init = 4, n_h = 6;
    Dataset data = oracles::excited_dataset(plant, 48, 9, 0.8, 0.3);
    HankelStack stack = build_stack(data, t_init, n_h);
    KktFactor factor = factorize_kkt(stack, RegularizerWeights::constant(stack.n_c, 1e-6));
    ConstraintSets sets = paper_sets();
    ObjectiveSpec obj = tracking_objective(-0.5);
    Forecast f = zero_forecast(n_h, 0.02);

    std::deque<double> uh(t_init, 0.0), wh(t_init, 0.0), yh(t_init, 0.0);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
    double final_err = kInf;
    for (int k = 0; k < 30; ++k) {
      ControlHistory hist;
      hist.u_init.resize(t_init);
      hist.w_init.resize(t_init);
      hist.y_init.resize(t_init);
      for (Eigen::Index i = 0; i < t_init; ++i) {
        hist.u_init[i] = uh[i];
        hist.w_init[i] = wh[i];
        hist.y_init[i] = yh[i];
      }
      ControlSolution sol = solve_control(factor, stack, hist, f, sets, obj);
      const double u = sol.u_nominal[0];
      const double y = (plant.c * x)(0);
      x = plant.a * x + plant.b * Eigen::VectorXd::Constant(1, u);
      uh.pop_front();
      uh.push_back(u);
      wh.pop_front();
      wh.push_back(0.0);
      yh.pop_front();
      yh.push_back(y);
      final_err = std::abs(y - (-0.5));
    }
    CHECK(final_err < 0.05);
  }

  TEST_CASE("assembly rejects inconsistent shapes") {
    ControlSetup s = make_setup(4, 4, 51);
    ConstraintSets sets = paper_sets();
    ObjectiveSpec obj = tracking_objective(-0.5);

    Forecast bad = zero_forecast(3, 0.1);  // wrong horizon
    CHECK_THROWS_AS(assemble_problem(s.factor, s.stack, s.history, bad, sets, obj),
                    DimensionError);

    ObjectiveSpec bad_ref = obj;
    bad_ref.y_ref = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(
        assemble_problem(s.factor, s.stack, s.history, zero_forecast(4, 0.1), sets, bad_ref),
        DimensionError);

    ObjectiveSpec bad_weight = obj;
    bad_weight.u_weight = -1.0;
    CHECK_THROWS_AS(
        assemble_problem(s.factor, s.stack, s.history, zero_forecast(4, 0.1), sets, bad_weight),
        ConfigError);

    ConstraintSets bad_sets{Box(Eigen::VectorXd::Constant(3, -1.0), Eigen::VectorXd::Constant(3, 1.0)),
                            Box(vec1(-2.0), vec1(0.5))};
    CHECK_THROWS_AS(
        assemble_problem(s.factor, s.stack, s.history, zero_forecast(4, 0.1), bad_sets, obj),
        DimensionError);

    Forecast inf_dev = zero_forecast(4, 0.1);
    inf_dev.deviation = Box(vec1(-kInf), vec1(kInf));
    CHECK_THROWS_AS(
        assemble_problem(s.factor, s.stack, s.history, inf_dev, sets, obj), ConfigError);
  }

  TEST_CASE("assembled problems can be dumped and reused") {
    ControlSetup s = make_setup(4, 4, 61);
    ConstraintSets sets{Box(vec1(-2.0), vec1(2.0)), Box(vec1(-3.0), vec1(1.5))};
    AssembledProblem as = assemble_problem(s.factor, s.stack, s.history, zero_forecast(4, 0.1),
                                           sets, tracking_objective(-0.5));
    CHECK(as.qp.n() >= 4);
    CHECK(!as.qp.a_labels.empty());
    ControlSolution sol1 = solve_assembled(as);
    ControlSolution sol2 = solve_assembled(as);
    CHECK(sol1.objective_value == sol2.objective_value);
    CHECK((sol1.u_nominal - sol2.u_nominal).cwiseAbs().maxCoeff() == 0.0);
  }
}
