#include <doctest.h>

#include <sstream>

#include "minsense/collision.hpp"
#include "minsense/conic.hpp"
#include "minsense/errors.hpp"

using namespace minsense;
using namespace minsense::conic;

TEST_SUITE("conic") {

TEST_CASE("LP with a single bound") {
  ConicProblem p;
  const int x = p.add_scalar("x");
  p.add_objective(LinExpr::var(x));
  p.add_nonneg(LinExpr::var(x) - 1.0);
  const auto sol = solve(p);
  REQUIRE(sol.status == Status::optimal);
  CHECK(sol.value(x) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(sol.max_violation <= 1e-8);
}

TEST_CASE("LP with an equality") {
  ConicProblem p;
  const int x = p.add_scalar("x"), y = p.add_scalar("y");
  p.add_objective(LinExpr::var(x) + LinExpr::var(y));
  p.add_equality(LinExpr::var(x) - 2.0 * LinExpr::var(y));
  p.add_nonneg(LinExpr::var(x) - 1.0);
  p.add_nonneg(LinExpr::var(y) - 1.0);
  const auto sol = solve(p);
  REQUIRE(sol.status == Status::optimal);
  CHECK(sol.objective == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(sol.value(x) == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("SDP: minimum trace above the identity") {
  ConicProblem p;
  const SymVar X = p.add_symmetric("X", 2);
  p.add_objective(X(0, 0) + X(1, 1));
  p.add_psd(AffineMatrix::from(X) + AffineMatrix::constant(-Mat::Identity(2, 2)));
  const auto sol = solve(p);
  REQUIRE(sol.status == Status::optimal);
  CHECK(sol.objective == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(sol.value(X).isApprox(Mat::Identity(2, 2), 1e-6));
}

TEST_CASE("constant PSD constraints") {
  SUBCASE("identity is always feasible") {
    ConicProblem p;
    const int x = p.add_scalar("x");
    p.add_objective(LinExpr::var(x));
    p.add_nonneg(LinExpr::var(x));
    p.add_psd(AffineMatrix::constant(Mat::Identity(2, 2)));
    CHECK(solve(p).status == Status::optimal);
  }
  SUBCASE("negative identity is infeasible") {
    ConicProblem p;
    const int x = p.add_scalar("x");
    p.add_objective(LinExpr::var(x));
    p.add_nonneg(LinExpr::var(x));
    p.add_psd(AffineMatrix::constant(-Mat::Identity(2, 2)));
    CHECK(solve(p).status == Status::infeasible);
  }
  SUBCASE("empty matrix") {
    ConicProblem p;
    CHECK_THROWS_AS(p.add_psd(AffineMatrix(0)), ShapeMismatch);
  }
}

TEST_CASE("unbounded objective") {
  ConicProblem p;
  const int x = p.add_scalar("x");
  p.add_objective(LinExpr::var(x));
  p.add_nonneg(-LinExpr::var(x));
  CHECK(solve(p).status == Status::unbounded);
}

TEST_CASE("second-order cone") {
  ConicProblem p;
  const int x = p.add_scalar("x"), t = p.add_scalar("t");
  p.add_objective(LinExpr::var(t));
  p.add_soc(LinExpr::var(t), {LinExpr::var(x) - 1.0, LinExpr(2.0)});
  const auto sol = solve(p);
  REQUIRE(sol.status == Status::optimal);
  CHECK(sol.objective == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(sol.value(x) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("quadratic constraint") {
  // min -y s.t. x^2 + y^2 <= 1 -> y = 1 is not the answer; use ||(x, y)||^2 <= y + 2: max y = 2.
  ConicProblem p;
  const int x = p.add_scalar("x"), y = p.add_scalar("y");
  p.add_objective(-LinExpr::var(y));
  p.add_quadratic_le({LinExpr::var(x), LinExpr::var(y)}, LinExpr::var(y) + 2.0);
  const auto sol = solve(p);
  REQUIRE(sol.status == Status::optimal);
  CHECK(sol.value(y) == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("log-det objective") {
  ConicProblem p;
  const SymVar X = p.add_symmetric("X", 2);
  p.add_objective(X(0, 0) + 2.0 * X(1, 1));
  p.add_neg_logdet(AffineMatrix::from(X), 1.0);
  const auto sol = solve(p);
  REQUIRE(sol.status == Status::optimal);
  // stationarity: C = X^{-1} -> X = diag(1, 0.5)
  CHECK(sol.value(X).isApprox(Eigen::Vector2d(1.0, 0.5).asDiagonal().toDenseMatrix(), 1e-7));
  CHECK(sol.objective == doctest::Approx(2.0 + std::log(2.0)).epsilon(1e-8));
  CHECK_THROWS_AS(p.add_neg_logdet(AffineMatrix::from(X), -1.0), DomainError);
}

TEST_CASE("Kalman LMI is tight at the largest feasible information") {
  const Mat W = 0.2e-3 * Mat::Identity(2, 2);
  const Mat M = Eigen::Matrix2d{{900.0, 120.0}, {120.0, 400.0}};  // Q_{k-1} + S_{k-1}
  ConicProblem p;
  const SymVar Q = p.add_symmetric("Q", 2);
  p.add_objective(-(Q(0, 0) + Q(1, 1)));
  AffineMatrix lmi(6);
  const AffineMatrix Qm = AffineMatrix::from(Q);
  lmi.set_block(0, 0, Qm);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      lmi.set(i, 2 + j, Q(i, j));
      lmi.set(i, 4 + j, 0.2e-3 * Q(i, j));
    }
  lmi.set_block(2, 2, M);
  lmi.set_block(4, 4, W);
  p.add_psd(lmi);
  const auto sol = solve(p);
  REQUIRE(sol.status == Status::optimal);
  const Mat expected = inverse_spd(inverse_spd(M) + W);
  CHECK((sol.value(Q) - expected).norm() <= 1e-6 * expected.norm());
  CHECK(min_eigenvalue(lmi.eval(sol.x)) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("multiplier feasibility program on a safe transition") {
  // Two LMIs [2 l^T c - chi2, l^T A; A^T l, P^{-1}] >= 0 at both endpoints.
  const double chi2 = chi2_quantile(0.9, 2);
  Polytope obs;
  obs.A.resize(4, 2);
  obs.A << 1, 0, -1, 0, 0, 1, 0, -1;
  obs.b.resize(4);
  obs.b << 0.6, -0.4, 0.6, -0.4;
  const Vec x0 = Eigen::Vector2d(0.1, 0.2), x1 = Eigen::Vector2d(0.2, 0.2);
  const Mat P0 = 1e-3 * Mat::Identity(2, 2), W = 0.2e-3 * Mat::Identity(2, 2);
  ConicProblem p;
  const VecVar lam = p.add_vector("lambda", 4);
  for (int i = 0; i < 4; ++i) p.add_nonneg(lam(i));
  auto add_lmi = [&](const Vec& x, const Mat& P) {
    AffineMatrix m(3);
    const Vec c = obs.A * x - obs.b;
    m.set(0, 0, dot(2.0 * c, lam.exprs()) - chi2);
    for (int r = 0; r < 2; ++r) m.set(0, 1 + r, dot(obs.A.col(r), lam.exprs()));
    m.set_block(1, 1, inverse_spd(P));
    p.add_psd(m);
  };
  add_lmi(x0, P0);
  add_lmi(x1, P0 + W);
  const auto sol = solve(p);
  CHECK(sol.status == Status::optimal);
  CHECK(sol.max_violation <= 1e-8);
}

TEST_CASE("identical solves are deterministic") {
  ConicProblem p;
  const SymVar X = p.add_symmetric("X", 3);
  AffineMatrix c = AffineMatrix::constant(Eigen::Matrix3d{{2, 0.3, 0}, {0.3, 1, 0.1}, {0, 0.1, 3}});
  p.add_objective(X(0, 0) + X(1, 1) + X(2, 2) + X(0, 1));
  p.add_psd(AffineMatrix::from(X) + (-1.0) * c);
  const auto a = solve(p), b = solve(p);
  REQUIRE(a.status == Status::optimal);
  CHECK(a.objective == b.objective);
  CHECK(a.x == b.x);
}

TEST_CASE("initial point of the wrong length") {
  ConicProblem p;
  p.add_scalar("x");
  p.set_initial_point(Vec::Zero(3));
  CHECK_THROWS_AS(solve(p), ShapeMismatch);
}

TEST_CASE("unregistered variables are rejected") {
  ConicProblem p;
  p.add_scalar("x");
  CHECK_THROWS_AS(p.add_nonneg(LinExpr::var(4)), ShapeMismatch);
}

TEST_CASE("CBF export") {
  ConicProblem p;
  const SymVar X = p.add_symmetric("X", 2);
  const int t = p.add_scalar("t");
  p.add_objective(X(0, 0) + LinExpr::var(t));
  p.add_psd(AffineMatrix::from(X) + AffineMatrix::constant(-Mat::Identity(2, 2)));
  p.add_soc(LinExpr::var(t), {X(0, 1)});
  std::ostringstream os;
  write_cbf(p, os);
  const std::string s = os.str();
  CHECK(s.rfind("VER\n3\n", 0) == 0);
  CHECK(s.find("PSDCON") != std::string::npos);
  CHECK(s.find("Q 2") != std::string::npos);
  p.add_neg_logdet(AffineMatrix::from(X), 1.0);
  std::ostringstream os2;
  CHECK_THROWS_AS(write_cbf(p, os2), ShapeMismatch);
}

}  // TEST_SUITE
