#include "minsense/geometry.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "minsense/errors.hpp"

namespace minsense {

namespace {

struct Row {
  Vec a;
  double b;
};

void normalize(Row& r) {
  const double s = r.a.cwiseAbs().maxCoeff();
  if (s > 0.0) {
    r.a /= s;
    r.b /= s;
  }
}

void check_rows(const Polytope& p, const char* what) {
  if (p.A.rows() != p.b.size()) throw ShapeMismatch(std::string(what) + ": A and b disagree in row count");
  if (p.faces() < 1) throw DomainError(std::string(what) + ": polytope needs at least one face");
  for (int i = 0; i < p.faces(); ++i)
    if (p.A.row(i).norm() == 0.0) throw DomainError(std::string(what) + ": zero row in A");
}

void warn_row_scale(const Polytope& p, const std::string& what, std::vector<std::string>& out) {
  for (int i = 0; i < p.faces(); ++i) {
    const double n = p.A.row(i).norm();
    if (n < 1e-6 || n > 1e6) {
      std::ostringstream os;
      os << what << " face " << i << " has row norm " << n << " outside [1e-6, 1e6]";
      out.push_back(os.str());
    }
  }
}

}  // namespace

void validate_ellipse(const Ellipse& e) {
  if (e.shape.rows() != e.center.size() || e.shape.cols() != e.center.size())
    throw ShapeMismatch("ellipse: shape and center dimensions differ");
  if (!is_symmetric(e.shape, 1e-12)) throw DomainError("ellipse: shape is not symmetric");
  if (!(min_eigenvalue(e.shape) > 0.0)) throw DomainError("ellipse: shape is not positive definite");
}

std::vector<Polytope> complement_halfspaces(const Polytope& p) {
  std::vector<Polytope> out;
  out.reserve(p.faces());
  for (int i = 0; i < p.faces(); ++i) {
    Polytope h;
    h.A = -p.A.row(i);
    h.b = Vec::Constant(1, -p.b(i));
    out.push_back(std::move(h));
  }
  return out;
}

bool is_nonempty(const Polytope& p, double tol) {
  std::vector<Row> rows;
  rows.reserve(p.faces());
  for (int i = 0; i < p.faces(); ++i) {
    Row r{p.A.row(i).transpose(), p.b(i)};
    normalize(r);
    rows.push_back(std::move(r));
  }
  for (int var = p.dim() - 1; var >= 0; --var) {
    std::vector<Row> pos, neg, next;
    for (auto& r : rows) {
      const double c = r.a(var);
      if (c > 1e-14)
        pos.push_back(r);
      else if (c < -1e-14)
        neg.push_back(r);
      else {
        r.a(var) = 0.0;
        next.push_back(r);
      }
    }
    for (const auto& rp : pos)
      for (const auto& rn : neg) {
        Row r{rp.a / rp.a(var) - rn.a / rn.a(var), rp.b / rp.a(var) - rn.b / rn.a(var)};
        r.a(var) = 0.0;
        normalize(r);
        next.push_back(std::move(r));
      }
    rows = std::move(next);
  }
  for (const auto& r : rows)
    if (r.b < -tol) return false;
  return true;
}

bool is_bounded_2d(const Polytope& p, double tol) {
  if (p.dim() != 2) throw DomainError("is_bounded_2d: polytope is not planar");
  for (int i = 0; i < p.faces(); ++i) {
    const Eigen::Vector2d a = p.A.row(i).transpose().normalized();
    for (double sgn : {1.0, -1.0}) {
      const Eigen::Vector2d r(-sgn * a(1), sgn * a(0));
      bool recedes = true;
      for (int k = 0; k < p.faces() && recedes; ++k)
        if (p.A.row(k).dot(r) > tol * p.A.row(k).norm()) recedes = false;
      if (recedes) return false;
    }
  }
  return true;
}

std::vector<Eigen::Vector2d> vertices_2d(const Polytope& p, double tol) {
  if (p.dim() != 2) throw DomainError("vertices_2d: polytope is not planar");
  std::vector<Eigen::Vector2d> out;
  for (int i = 0; i < p.faces(); ++i)
    for (int j = i + 1; j < p.faces(); ++j) {
      Eigen::Matrix2d m;
      m.row(0) = p.A.row(i);
      m.row(1) = p.A.row(j);
      const double det = m.determinant();
      if (std::abs(det) <= 1e-14 * m.row(0).norm() * m.row(1).norm()) continue;
      const Eigen::Vector2d v = m.partialPivLu().solve(Eigen::Vector2d(p.b(i), p.b(j)));
      bool inside = true;
      for (int k = 0; k < p.faces() && inside; ++k)
        if (p.A.row(k).dot(v) - p.b(k) > tol * (1.0 + p.A.row(k).norm() * v.norm())) inside = false;
      if (!inside) continue;
      bool dup = false;
      for (const auto& w : out)
        if ((w - v).norm() <= 1e-12 * (1.0 + v.norm())) dup = true;
      if (!dup) out.push_back(v);
    }
  return out;
}

bool polytope_subset(const Polytope& inner, const Polytope& outer, double tol) {
  for (int l = 0; l < outer.faces(); ++l) {
    // inner is contained iff {x in inner : a_l^T x >= b_l + tol} is empty
    const double scale = outer.A.row(l).norm();
    Polytope probe;
    probe.A.resize(inner.faces() + 1, inner.dim());
    probe.b.resize(inner.faces() + 1);
    probe.A.topRows(inner.faces()) = inner.A;
    probe.b.head(inner.faces()) = inner.b;
    probe.A.row(inner.faces()) = -outer.A.row(l);
    probe.b(inner.faces()) = -outer.b(l) - tol * scale;
    if (is_nonempty(probe)) return false;
  }
  return true;
}

Environment build_environment(Polytope domain, std::vector<Polytope> obstacles, Polytope target) {
  check_rows(domain, "domain");
  check_rows(target, "target");
  const int d = domain.dim();
  if (target.dim() != d) throw ShapeMismatch("target dimension differs from domain");
  for (std::size_t m = 0; m < obstacles.size(); ++m) {
    check_rows(obstacles[m], "obstacle");
    if (obstacles[m].dim() != d) throw ShapeMismatch("obstacle dimension differs from domain");
  }

  Environment env;
  warn_row_scale(domain, "domain", env.warnings);
  warn_row_scale(target, "target", env.warnings);
  for (std::size_t m = 0; m < obstacles.size(); ++m) {
    warn_row_scale(obstacles[m], "obstacle " + std::to_string(m), env.warnings);
    if (!is_nonempty(obstacles[m])) throw EmptyPolytope("obstacle " + std::to_string(m) + " is empty");
  }
  if (!is_nonempty(domain)) throw EmptyPolytope("domain is empty");
  if (!is_nonempty(target)) throw EmptyPolytope("target is empty");

  bool contained = false;
  if (d == 2 && is_bounded_2d(target)) {
    contained = true;
    for (const auto& v : vertices_2d(target))
      if (!domain.contains(v, 1e-9)) contained = false;
  } else {
    contained = polytope_subset(target, domain);
  }
  if (!contained) throw TargetOutsideDomain("target region is not contained in the domain");

  env.domain = std::move(domain);
  env.obstacles = std::move(obstacles);
  env.target = std::move(target);
  env.unified = env.obstacles;
  for (auto& h : complement_halfspaces(env.domain)) env.unified.push_back(std::move(h));
  env.target_out = complement_halfspaces(env.target);
  return env;
}

double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0)) throw DomainError("regularized_gamma_p: a must be positive");
  if (x <= 0.0) return 0.0;
  const double log_prefactor = -x + a * std::log(x) - std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int n = 0; n < 10000; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-17) break;
    }
    return sum * std::exp(log_prefactor);
  }
  // Modified Lentz continued fraction for the upper tail.
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double dd = 1.0 / b;
  double h = dd;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    dd = an * dd + b;
    if (std::abs(dd) < tiny) dd = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    dd = 1.0 / dd;
    const double del = dd * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-17) break;
  }
  return 1.0 - std::exp(log_prefactor) * h;
}

double chi2_cdf(double x, int d) {
  if (d < 1) throw DomainError("chi2_cdf: degrees of freedom must be positive");
  if (x <= 0.0) return 0.0;
  if (d % 2 == 0) {
    // Finite Poisson sum for even degrees of freedom.
    const double h = 0.5 * x;
    double term = 1.0;
    double sum = 1.0;
    for (int i = 1; i < d / 2; ++i) {
      term *= h / i;
      sum += term;
    }
    return -std::expm1(-h) - std::exp(-h) * (sum - 1.0);
  }
  return regularized_gamma_p(0.5 * d, 0.5 * x);
}

double chi2_quantile(double pr, int d) {
  if (!(pr > 0.0 && pr < 1.0)) throw DomainError("chi2_quantile: probability must lie in (0, 1)");
  if (d < 1) throw DomainError("chi2_quantile: degrees of freedom must be positive");
  if (d == 2) return -2.0 * std::log1p(-pr);
  double lo = 0.0;
  double hi = std::max(1.0, static_cast<double>(d));
  while (chi2_cdf(hi, d) < pr) hi *= 2.0;
  for (int it = 0; it < 4000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (chi2_cdf(mid, d) < pr)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-15 * hi) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace minsense
