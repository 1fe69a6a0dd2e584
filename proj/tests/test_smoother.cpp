#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "minsense/errors.hpp"
#include "minsense/io.hpp"
#include "minsense/planner.hpp"
#include "minsense/smoother.hpp"

using namespace minsense;
using testing_util::box;
using testing_util::halfspace;
using testing_util::random_spd;
using testing_util::random_vec;

namespace {

const ProcessModel kModel{0.2e-3 * Mat::Identity(2, 2), 1.0};
const SafetyConfig kSafety = SafetyConfig::from_probability(0.9, 2);
const Mat kP0 = 1e-4 * Mat::Identity(2, 2);

Environment door_env() {
  return build_environment(box(0, 1, 0, 1), {box(0.45, 0.55, 0.0, 0.4), box(0.45, 0.55, 0.6, 1.0)},
                           box(0.8, 0.95, 0.8, 0.95));
}

// [2 l^T (A x - b) - chi2, l^T A; A^T l, M]
Mat lmi(const Vec& lambda, const Polytope& obs, const Vec& x, const Mat& M, double chi2) {
  const int d = static_cast<int>(x.size());
  Mat m(d + 1, d + 1);
  m(0, 0) = 2.0 * lambda.dot(obs.A * x - obs.b) - chi2;
  m.block(0, 1, 1, d) = lambda.transpose() * obs.A;
  m.block(1, 0, d, 1) = obs.A.transpose() * lambda;
  m.block(1, 1, d, d) = M;
  return m;
}

SmootherConfig config(double alpha) {
  SmootherConfig c;
  c.alpha = alpha;
  c.safety = kSafety;
  return c;
}

BeliefPath planned(const Environment& env, double alpha, int n, std::uint64_t seed, int K) {
  PlannerConfig pc;
  pc.n_nodes = n;
  pc.seed = seed;
  Planner pl(env, kModel, kSafety, alpha, pc);
  const Tree& t = pl.build(Eigen::Vector2d(0.1, 0.1), kP0);
  BeliefPath p = extract_path(t, env, kModel, kSafety, K);
  p.alpha = alpha;
  return p;
}

double info_amount(const BeliefPath& p) {
  double s = 0.0;
  for (int k = 1; k <= p.K(); ++k) {
    const auto& st = p.steps[static_cast<std::size_t>(k)];
    s += 0.5 * h3(st.Q, st.S);
  }
  return s;
}

}  // namespace

TEST_SUITE("smoother") {

TEST_CASE("initial multipliers") {
  const double chi2 = kSafety.chi2;
  SUBCASE("far from the obstacle the single-face closed form is feasible") {
    const Polytope obs = box(0.7, 0.9, 0.0, 1.0);
    const Vec x0 = Eigen::Vector2d(0.1, 0.5), x1 = Eigen::Vector2d(0.2, 0.55);
    const Mat P0 = kP0, M1 = inverse_spd(P0 + kModel.W);
    // row 1 (-x <= -0.7) is the only face the transition lies outside of
    const Vec a = obs.A.row(1).transpose();
    // per-endpoint maximizer c / a^T P a; the smaller one keeps both concave
    // quadratics on their increasing side
    const double l0 = (a.dot(x0) - obs.b(1)) / a.dot(P0 * a);
    const double l1 = (a.dot(x1) - obs.b(1)) / a.dot((P0 + kModel.W) * a);
    Vec lam = Vec::Zero(4);
    lam(1) = std::min(l0, l1);
    CHECK(lam(1) > 0.0);
    CHECK(min_eigenvalue(lmi(lam, obs, x0, inverse_spd(P0), chi2)) >= 0.0);
    CHECK(min_eigenvalue(lmi(lam, obs, x1, M1, chi2)) >= 0.0);

    const Environment env = build_environment(box(0, 1, 0, 1), {obs}, box(0.05, 0.3, 0.4, 0.7));
    const BeliefPath path = kalman_path({x0, x1}, {Mat::Zero(2, 2), Mat::Zero(2, 2)}, P0, kModel, 1.0);
    const auto L = init_lambda(path, env, kSafety);
    REQUIRE(L.size() == 1);
    REQUIRE(static_cast<int>(L[0].size()) == env.num_unified());
    for (int j = 0; j < env.num_unified(); ++j) {
      const Polytope& o = env.unified[static_cast<std::size_t>(j)];
      const Vec& l = L[0][static_cast<std::size_t>(j)];
      CHECK(l.minCoeff() >= 0.0);
      const Mat A = lmi(l, o, x0, inverse_spd(P0), chi2), B = lmi(l, o, x1, M1, chi2);
      CHECK(min_eigenvalue(A) >= -1e-9 * A.norm());
      CHECK(min_eigenvalue(B) >= -1e-9 * B.norm());
    }
  }
  SUBCASE("a transition through an obstacle is reported with its indices") {
    const Environment env = door_env();
    const std::vector<Vec> xs = {Eigen::Vector2d(0.2, 0.2), Eigen::Vector2d(0.3, 0.2), Eigen::Vector2d(0.6, 0.2)};
    const BeliefPath path = kalman_path(xs, std::vector<Mat>(3, Mat::Zero(2, 2)), kP0, kModel, 1.0);
    try {
      init_lambda(path, env, kSafety);
      FAIL("expected InitInfeasible");
    } catch (const InitInfeasible& e) {
      CHECK(e.k == 2);
      CHECK(e.j == 0);
    }
  }
}

TEST_CASE("certificate multipliers satisfy both matrix inequalities") {
  std::mt19937_64 rng(61);
  const double chi2 = kSafety.chi2;
  int certified = 0;
  for (int t = 0; t < 200; ++t) {
    const Vec lo = random_vec(rng, 2, 0.3, 0.6);
    const Vec hi = lo + random_vec(rng, 2, 0.05, 0.3);
    const Polytope obs = box(lo(0), hi(0), lo(1), hi(1));
    const Vec x0 = random_vec(rng, 2, 0.0, 1.0);
    const Vec x1 = x0 + random_vec(rng, 2, -0.1, 0.1);
    const Mat P = random_spd(rng, 2, 1e-4, 10.0);
    const TransitionQuery q{x0, x1, P, kModel.W, obs, chi2};
    const auto cert = continuous_certificate(q);
    const Mat M0 = inverse_spd(P), M1 = inverse_spd(P + kModel.W);
    if (cert) {
      ++certified;
      const Mat A = lmi(cert->lambda, obs, x0, M0, chi2), B = lmi(cert->lambda, obs, x1, M1, chi2);
      CHECK(min_eigenvalue(A) >= -1e-9 * A.norm());
      CHECK(min_eigenvalue(B) >= -1e-9 * B.norm());
    }
    // Schur margins and eigenvalues agree in sign at an arbitrary multiplier
    const Vec lam = random_vec(rng, 4, 0.0, 20.0);
    const auto [m0, m1] = lambda_lmi_margins(lam, obs, x0, M0, x1, M1, chi2);
    const double e0 = min_eigenvalue(lmi(lam, obs, x0, M0, chi2));
    const double e1 = min_eigenvalue(lmi(lam, obs, x1, M1, chi2));
    if (std::abs(m0) > 1e-9) CHECK((m0 > 0) == (e0 > 0));
    if (std::abs(m1) > 1e-9) CHECK((m1 > 0) == (e1 > 0));
  }
  CHECK(certified > 20);
}

TEST_CASE("linearized information term") {
  std::mt19937_64 rng(62);
  const Mat Qt = random_spd(rng, 2, 500.0, 20.0);
  const Mat St = random_spd(rng, 2, 100.0, 50.0);
  const H3Linearization lin = linearize_h3(Qt, St);
  CHECK(lin(Qt, St) == doctest::Approx(h3(Qt, St)).epsilon(1e-12));
  CHECK(std::abs(lin(Qt, St) - h3(Qt, St)) <= 1e-12);

  SUBCASE("majorizes on random perturbations") {
    for (int t = 0; t < 1000; ++t) {
      const Mat Q = random_spd(rng, 2, 10.0 * std::pow(10.0, random_vec(rng, 1, 0, 2)(0)), 100.0);
      Mat S = random_spd(rng, 2, std::pow(10.0, random_vec(rng, 1, -1, 3)(0)), 100.0);
      if (t % 5 == 0) S.setZero();
      CHECK(lin(Q, S) >= h3(Q, S) - 1e-12 * std::max(1.0, std::abs(h3(Q, S))));
    }
  }
  SUBCASE("gradient matches central differences of logdet(Q + S)") {
    const double h = 1e-4;
    for (int r = 0; r < 2; ++r)
      for (int c = r; c < 2; ++c) {
        Mat E = Mat::Zero(2, 2);
        E(r, c) = E(c, r) = 1.0;
        const double scale = h * (Qt + St).norm();
        const double fd = (logdet_spd(Qt + St + scale * E) - logdet_spd(Qt + St - scale * E)) / (2.0 * scale);
        const double an = (lin.grad.cwiseProduct(E)).sum();
        CHECK(std::abs(fd - an) <= 1e-5 * std::abs(an));
      }
  }
  CHECK_THROWS_AS(linearize_h3(-Mat::Identity(2, 2), Mat::Zero(2, 2)), SingularMatrix);
}

TEST_CASE("linearized separation term") {
  std::mt19937_64 rng(63);
  const double chi2 = kSafety.chi2;
  const Polytope obs = box(0.4, 0.6, 0.2, 0.8);
  const Vec xt = Eigen::Vector2d(0.2, 0.5);
  const Vec lt = Eigen::Vector4d(0.0, 3.0, 0.5, 0.0);
  const H2Linearization lin = linearize_h2(xt, lt, obs, chi2);
  CHECK(std::abs(lin(0.7, xt, lt) - h2(0.7, xt, lt, obs, chi2)) <= 1e-12);
  for (int t = 0; t < 1000; ++t) {
    const double R = random_vec(rng, 1, 0, 5)(0);
    const Vec x = xt + random_vec(rng, 2, -0.5, 0.5);
    const Vec l = (lt + random_vec(rng, 4, -3, 3)).cwiseMax(0.0);
    const double true_v = h2(R, x, l, obs, chi2);
    CHECK(lin(R, x, l) >= true_v - 1e-12 * std::max(1.0, std::abs(true_v)));
  }
  // with a scalar-looking multiplier the square is the squared norm
  CHECK(h2(0.0, xt, lt, obs, chi2) == doctest::Approx(chi2 - 2.0 * lt.dot(obs.A * xt - obs.b)).epsilon(1e-12));
  CHECK_THROWS_AS(linearize_h2(xt, Vec::Zero(3), obs, chi2), ShapeMismatch);
}

TEST_CASE("subproblem census and touch point") {
  // K = 6, J = 6 (two obstacles plus four domain faces), N_t = 4, d = 2
  const Environment env = build_environment(box(0, 1, 0, 1), {box(0.3, 0.5, 0.0, 0.35), box(0.55, 0.75, 0.55, 1.0)},
                                            box(0.8, 0.95, 0.05, 0.2));
  const std::vector<Vec> xs = {Eigen::Vector2d(0.1, 0.9), Eigen::Vector2d(0.2, 0.75), Eigen::Vector2d(0.33, 0.6),
                               Eigen::Vector2d(0.45, 0.48), Eigen::Vector2d(0.6, 0.4), Eigen::Vector2d(0.75, 0.28),
                               Eigen::Vector2d(0.875, 0.125)};
  std::vector<Mat> ss(7, Mat::Zero(2, 2));
  ss[3] = 3000 * Mat::Identity(2, 2);
  ss[6] = 20000 * Mat::Identity(2, 2);
  const BeliefPath path = kalman_path(xs, ss, kP0, kModel, 1.0);
  REQUIRE(certify_path(path, env, kModel, kSafety.chi2).ok());
  const SmootherConfig cfg = config(1.0);
  const CcpState st = initial_state(path, env, cfg);
  const Subproblem sp = build_subproblem(st, env, kModel, cfg);

  const int K = 6, J = 6, Nt = 4, d = 2, sv = 3;
  int faces = 0;
  for (const auto& o : env.unified) faces += o.faces();
  CHECK(faces == 12);
  const Census& c = sp.census;
  CHECK(c.vars_x == K * d);
  CHECK(c.vars_Q == K * sv);
  CHECK(c.vars_S == K * sv);
  CHECK(c.vars_lambda == K * faces);
  CHECK(c.vars_R == (K - 1) * J);
  CHECK(c.vars_R_hat == K * J);
  CHECK(c.vars_C == Nt);
  CHECK(c.vars_epi == K);
  CHECK(c.total_vars() == sp.problem.num_variables());
  CHECK(c.kf_lmi == K);
  CHECK(c.target_lmi == 2 * Nt);
  CHECK(c.initial_lmi == J);
  CHECK(c.h1_lmi == (K - 1) * J + K * J);
  CHECK(c.h2_quad == (K - 1) * J + K * J);
  CHECK(c.epi_quad == K);
  CHECK(c.nonneg == K * faces + (K - 1) * J + K * J + Nt);
  CHECK(c.psd_domain == 2 * K);
  CHECK(c.logdet_terms == K);
  CHECK(c.total_constraints() == static_cast<int>(sp.problem.constraints().size()));

  const Vec v = sp.point_of(st);
  CHECK(sp.problem.max_violation(v) <= 1e-9);
  CHECK(sp.objective(v) == doctest::Approx(path_cost(path)).epsilon(1e-10));

  CcpState bad = st;
  bad.lambda.pop_back();
  CHECK_THROWS_AS(build_subproblem(bad, env, kModel, cfg), ShapeMismatch);
}

TEST_CASE("Kalman tightness check") {
  const std::vector<Vec> xs = {Eigen::Vector2d(0.1, 0.1), Eigen::Vector2d(0.2, 0.15), Eigen::Vector2d(0.3, 0.2)};
  std::vector<Mat> ss(3, Mat::Zero(2, 2));
  ss[1] = 500 * Mat::Identity(2, 2);
  BeliefPath p = kalman_path(xs, ss, kP0, kModel, 1.0);
  CHECK(check_kf_tightness(p, kModel) <= 1e-12);
  p.steps[2].Q *= 0.9;  // strictly inside the Kalman LMI
  CHECK(check_kf_tightness(p, kModel) > 1e-6);
}

TEST_CASE("straight corridor converges to equal spacing") {
  const Environment env = build_environment(box(0, 1, 0, 1), {}, box(0.7, 0.95, 0.35, 0.65));
  const std::vector<Vec> xs = {Eigen::Vector2d(0.1, 0.5), Eigen::Vector2d(0.3, 0.6), Eigen::Vector2d(0.45, 0.4),
                               Eigen::Vector2d(0.65, 0.58), Eigen::Vector2d(0.85, 0.5)};
  const BeliefPath seed = kalman_path(xs, std::vector<Mat>(5, Mat::Zero(2, 2)), kP0, kModel, 1.0);
  REQUIRE(certify_path(seed, env, kModel, kSafety.chi2).ok());
  SmootherConfig cfg = config(1.0);
  cfg.max_iters = 10;
  const SmoothResult r = smooth(seed, env, kModel, cfg);
  CHECK(r.all_optimal);
  CHECK(r.final_verdict.ok());
  const int K = r.path.K();
  const Vec& x0 = r.path.steps.front().x;
  const Vec& xK = r.path.steps.back().x;
  const CostBreakdown parts = path_cost_parts(r.path);
  CHECK(parts.control == doctest::Approx((xK - x0).squaredNorm() / K).epsilon(1e-5));
  for (int k = 1; k < K; ++k) {
    const Vec expect = x0 + (xK - x0) * (static_cast<double>(k) / K);
    CHECK((r.path.steps[static_cast<std::size_t>(k)].x - expect).norm() <= 1e-4);
  }
  for (int k = 1; k <= K; ++k) {
    const auto& st = r.path.steps[static_cast<std::size_t>(k)];
    CHECK(st.S.norm() <= 1e-5 * st.Q.norm());
  }
  CHECK(check_kf_tightness(r.path, kModel) <= 1e-5);
}

TEST_CASE("smoothing a planned path") {
  const Environment env = door_env();
  const BeliefPath seed = planned(env, 1.0, 200, 3, 10);
  SmootherConfig cfg = config(1.0);
  cfg.max_iters = 5;
  cfg.tol = -1.0;
  cfg.recertify = true;
  int seen = 0;
  const SmoothResult r = smooth(seed, env, kModel, cfg, [&](const CcpState&) { ++seen; });
  CHECK(seen == static_cast<int>(r.cost_history.size()));
  REQUIRE(r.cost_history.size() == 6);
  CHECK(r.cost_history.front() == doctest::Approx(path_cost(seed)).epsilon(1e-12));
  for (std::size_t i = 1; i < r.cost_history.size(); ++i) CHECK(r.cost_history[i] <= r.cost_history[i - 1] + 1e-6);
  CHECK(r.cost_history.back() <= path_cost(seed));
  for (const auto& v : r.verdicts) CHECK(v.ok());
  for (const auto& row : r.trace) CHECK(row.viol <= 1e-7);
  if (r.all_optimal) CHECK(check_kf_tightness(r.path, kModel) <= 1e-5);
  for (double k : r.kf_residual_raw) CHECK(k <= 1e-5);

  SUBCASE("a tampered seed is rejected with its indices") {
    BeliefPath bad = seed;
    bad.steps[2].x = Eigen::Vector2d(0.5, 0.2);  // inside the lower door post
    CHECK_THROWS_AS(smooth(bad, env, kModel, cfg), InitInfeasible);
  }
  SUBCASE("configuration errors") {
    SmootherConfig c = cfg;
    c.max_iters = 0;
    CHECK_THROWS_AS(smooth(seed, env, kModel, c), DomainError);
    c = cfg;
    c.damping = 1.5;
    CHECK_THROWS_AS(smooth(seed, env, kModel, c), DomainError);
  }
}

TEST_CASE("a larger information weight buys less information") {
  const Environment env = door_env();
  SmootherConfig lo = config(0.1), hi = config(1.0);
  lo.max_iters = hi.max_iters = 5;
  const SmoothResult a = smooth(planned(env, 0.1, 300, 3, 10), env, kModel, lo);
  const SmoothResult b = smooth(planned(env, 1.0, 300, 3, 10), env, kModel, hi);
  CHECK(info_amount(b.path) <= info_amount(a.path));
}

TEST_CASE("large multipliers: strict start and bounded Newton work") {
  // Seed path whose certificates carry multipliers in the thousands. Flooring
  // them for the interior start used to break the linearized separation
  // constraints, and the last barrier stages used to spin on null steps.
  const std::string dir = MINSENSE_TEST_DATA;
  const io::Scenario sc = io::parse_scenario(io::read_file(dir + "/large_multiplier_env.json"));
  const BeliefPath seed = io::parse_path(io::read_file(dir + "/large_multiplier_path.json"));
  SmootherConfig cfg = config(seed.alpha);
  const CcpState s0 = initial_state(seed, sc.env, cfg);
  const Subproblem sp = build_subproblem(s0, sc.env, kModel, cfg);
  const Vec start = *sp.problem.initial_point();
  for (int i = 0; i < static_cast<int>(sp.problem.constraints().size()); ++i)
    CHECK(sp.problem.violation(i, start) == 0.0);
  const StepOutcome out = ccp_step(s0, sc.env, kModel, cfg);
  CHECK(out.newton_steps < 1000);
  CHECK(path_cost(out.state.path) < path_cost(seed));
  CHECK(certify_path(out.state.path, sc.env, kModel, kSafety.chi2).ok());
}

}  // TEST_SUITE
