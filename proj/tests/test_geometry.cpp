#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "minsense/errors.hpp"
#include "minsense/geometry.hpp"

using namespace minsense;
using testing_util::box;
using testing_util::triangle;

TEST_SUITE("geometry") {

TEST_CASE("complement of the unit box flips every row") {
  const Polytope p = box(0, 1, 0, 1);
  const auto c = complement_halfspaces(p);
  REQUIRE(c.size() == 4);
  for (int l = 0; l < 4; ++l) {
    CHECK(c[static_cast<std::size_t>(l)].faces() == 1);
    CHECK(c[static_cast<std::size_t>(l)].A.row(0).isApprox(-p.A.row(l)));
    CHECK(c[static_cast<std::size_t>(l)].b(0) == -p.b(l));
  }
  // face x1 >= 0 (row -x1 <= 0) becomes x1 <= 0
  CHECK(c[1].contains(Eigen::Vector2d(-0.5, 0.3)));
  CHECK_FALSE(c[1].contains(Eigen::Vector2d(0.5, 0.3)));
}

TEST_CASE("complement of a single half-space is an involution") {
  const Polytope h = testing_util::halfspace(Eigen::Vector2d(1, 0), 1.0);
  const auto c = complement_halfspaces(h);
  REQUIRE(c.size() == 1);
  CHECK(c[0].A(0, 0) == -1.0);
  CHECK(c[0].b(0) == -1.0);
  const auto cc = complement_halfspaces(c[0]);
  CHECK(cc[0].A == h.A);
  CHECK(cc[0].b == h.b);
}

TEST_CASE("triangle complement partitions random points") {
  const Polytope t = triangle({0.2, 0.1}, {0.9, 0.3}, {0.4, 0.8});
  const auto c = complement_halfspaces(t);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  int checked = 0;
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector2d x(u(rng), u(rng));
    const Vec r = t.A * x - t.b;
    if (r.cwiseAbs().minCoeff() < 1e-9) continue;
    bool in_c = false;
    for (const auto& h : c) in_c = in_c || h.contains(x);
    CHECK(t.contains(x) != in_c);
    ++checked;
  }
  CHECK(checked > 9900);
}

TEST_CASE("environment assembly counts") {
  const Polytope dom = box(0, 1, 0, 1);
  const Polytope tar = box(0.8, 0.95, 0.8, 0.95);
  SUBCASE("two obstacles, four walls") {
    const Environment env = build_environment(dom, {box(0.2, 0.4, 0.2, 0.4), box(0.5, 0.7, 0.1, 0.3)}, tar);
    CHECK(env.num_unified() == 6);
    CHECK(env.target_out.size() == 4);
    for (int j = 2; j < 6; ++j) CHECK(env.unified[static_cast<std::size_t>(j)].faces() == 1);
  }
  SUBCASE("no obstacles") {
    const Environment env = build_environment(dom, {}, tar);
    CHECK(env.num_unified() == 4);
    for (const auto& u : env.unified) CHECK(u.faces() == 1);
  }
  SUBCASE("ten random boxes") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 0.8);
    std::vector<Polytope> obs;
    for (int i = 0; i < 10; ++i) {
      const double x = u(rng), y = u(rng);
      obs.push_back(box(x, x + 0.1, y, y + 0.1));
    }
    CHECK(build_environment(dom, obs, tar).num_unified() == 14);
  }
}

TEST_CASE("environment errors") {
  const Polytope dom = box(0, 1, 0, 1);
  Polytope empty = box(0.5, 0.4, 0.2, 0.3);  // x in [0.5, 0.4]
  CHECK_THROWS_AS(build_environment(dom, {empty}, box(0.8, 0.9, 0.8, 0.9)), EmptyPolytope);
  CHECK_THROWS_AS(build_environment(dom, {}, box(0.8, 1.2, 0.8, 0.9)), TargetOutsideDomain);
  CHECK_THROWS_AS(build_environment(dom, {}, box(0.9, 0.8, 0.8, 0.9)), EmptyPolytope);
  Polytope zero_row = box(0.2, 0.3, 0.2, 0.3);
  zero_row.A.row(0).setZero();
  CHECK_THROWS_AS(build_environment(dom, {zero_row}, box(0.8, 0.9, 0.8, 0.9)), DomainError);
}

TEST_CASE("row scale warnings") {
  Polytope o = box(0.2, 0.3, 0.2, 0.3);
  o.A.row(0) *= 1e7;
  o.b(0) *= 1e7;
  const Environment env = build_environment(box(0, 1, 0, 1), {o}, box(0.8, 0.9, 0.8, 0.9));
  CHECK(env.warnings.size() == 1);
}

TEST_CASE("target containment with an unbounded target and higher dimension") {
  Polytope dom3;
  dom3.A.resize(6, 3);
  dom3.A << 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1;
  dom3.b = Vec::Ones(6);
  Polytope inner = dom3;
  inner.b *= 0.5;
  CHECK_NOTHROW(build_environment(dom3, {}, inner));
  Polytope outer = dom3;
  outer.b(0) = 2.0;
  CHECK_THROWS_AS(build_environment(dom3, {}, outer), TargetOutsideDomain);
}

TEST_CASE("vertices of a box") {
  const auto v = vertices_2d(box(0, 2, 0, 1));
  CHECK(v.size() == 4);
  CHECK(is_bounded_2d(box(0, 2, 0, 1)));
  CHECK_FALSE(is_bounded_2d(testing_util::halfspace(Eigen::Vector2d(1, 0), 1.0)));
}

TEST_CASE("chi-squared quantiles") {
  CHECK(chi2_quantile(0.9, 2) == doctest::Approx(4.605170185988091).epsilon(1e-13));
  // d = 1: CDF is erf(sqrt(x/2))
  const double q1 = chi2_quantile(0.5, 1);
  CHECK(q1 == doctest::Approx(0.45493642311957).epsilon(1e-10));
  CHECK(std::erf(std::sqrt(q1 / 2.0)) == doctest::Approx(0.5).epsilon(1e-12));
  // d = 3: erf(sqrt(x/2)) - sqrt(2x/pi) exp(-x/2)
  const double q3 = chi2_quantile(0.9, 3);
  CHECK(std::erf(std::sqrt(q3 / 2)) - std::sqrt(2 * q3 / M_PI) * std::exp(-q3 / 2) ==
        doctest::Approx(0.9).epsilon(1e-12));
  // d = 4: 1 - exp(-x/2)(1 + x/2)
  const double q4 = chi2_quantile(0.95, 4);
  CHECK(1 - std::exp(-q4 / 2) * (1 + q4 / 2) == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(chi2_quantile(1e-12, 2) == doctest::Approx(2e-12).epsilon(1e-6));
  CHECK_THROWS_AS(chi2_quantile(0.0, 2), DomainError);
  CHECK_THROWS_AS(chi2_quantile(1.0, 2), DomainError);
  CHECK_THROWS_AS(chi2_quantile(0.5, 0), DomainError);
}

TEST_CASE("chi-squared quantile is increasing") {
  for (int d = 1; d <= 5; ++d) {
    double prev = 0.0;
    for (int i = 1; i < 100; ++i) {
      const double q = chi2_quantile(i / 100.0, d);
      CHECK(q > prev);
      prev = q;
    }
  }
}

TEST_CASE("ellipse membership") {
  Ellipse e{Eigen::Vector2d(1, 2), Eigen::Vector2d(4, 0.25).asDiagonal(), 1.0};
  CHECK(ellipse_contains(e, e.center));
  CHECK_FALSE(ellipse_contains(e, Vec(e.center + Eigen::Vector2d(2.01, 0))));
  CHECK(ellipse_contains(e, Vec(e.center + Eigen::Vector2d(1.99, 0))));
  CHECK_FALSE(ellipse_contains(e, Vec(e.center + Eigen::Vector2d(0, 0.51))));

  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    Ellipse r{testing_util::random_vec(rng, 2, -1, 1), testing_util::random_spd(rng, 2, 0.3, 20.0), 4.6};
    CHECK_NOTHROW(validate_ellipse(r));
    Eigen::SelfAdjointEigenSolver<Mat> es(r.shape);
    for (int i = 0; i < 40; ++i) {
      const Vec x = testing_util::random_vec(rng, 2, -3, 3);
      const Vec y = es.eigenvectors().transpose() * (x - r.center);
      const double m = (y.array().square() / es.eigenvalues().array()).sum();
      if (std::abs(m - r.level) < 1e-9) continue;
      CHECK(ellipse_contains(r, x) == (m <= r.level));
    }
  }
  Ellipse bad{Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity() * -1.0, 1.0};
  CHECK_THROWS_AS(validate_ellipse(bad), DomainError);
}

}  // TEST_SUITE
