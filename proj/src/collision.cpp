#include "minsense/collision.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "minsense/conic.hpp"
#include "minsense/errors.hpp"

namespace minsense {

SafetyConfig SafetyConfig::from_probability(double pr, int d) {
  SafetyConfig s;
  s.pr = pr;
  s.d = d;
  s.chi2 = chi2_quantile(pr, d);
  s.gamma = 1.0 / std::sqrt(s.chi2);
  return s;
}

SafetyConfig SafetyConfig::from_chi2(double chi2, int d) {
  if (!(chi2 > 0.0)) throw DomainError("safety config: chi2 must be positive");
  SafetyConfig s;
  s.pr = chi2_cdf(chi2, d);
  s.d = d;
  s.chi2 = chi2;
  s.gamma = 1.0 / std::sqrt(chi2);
  return s;
}

double certificate_tol(double chi2) { return 1e-9 * std::max(1.0, chi2); }

// ---------------------------------------------------------------------------

DualSolution maximize_dual_qp(const Mat& G, const Vec& c) {
  const int f = static_cast<int>(c.size());
  if (G.rows() != f || G.cols() != f) throw ShapeMismatch("dual qp: G and c disagree");
  const double ridge = 1e-13 * std::max(G.trace() / f, 1e-300);
  Mat Gr = G;
  Gr.diagonal().array() += ridge;

  const double cscale = c.cwiseAbs().maxCoeff() + 1e-300;
  Vec lambda = Vec::Zero(f);
  std::vector<char> free(static_cast<std::size_t>(f), 0);
  const int max_iter = 50 + 20 * f;
  bool done = false;
  for (int it = 0; it < max_iter; ++it) {
    std::vector<int> F;
    for (int i = 0; i < f; ++i)
      if (free[static_cast<std::size_t>(i)]) F.push_back(i);
    Vec z = Vec::Zero(f);
    if (!F.empty()) {
      const int nf = static_cast<int>(F.size());
      Mat Gff(nf, nf);
      Vec cf(nf);
      for (int a = 0; a < nf; ++a) {
        cf(a) = c(F[a]);
        for (int e = 0; e < nf; ++e) Gff(a, e) = Gr(F[a], F[e]);
      }
      const Vec zf = Gff.ldlt().solve(cf);
      for (int a = 0; a < nf; ++a) z(F[a]) = zf(a);
    }
    bool interior = true;
    for (int i : F)
      if (!(z(i) > 0.0)) interior = false;
    if (interior) {
      lambda = z;
      const Vec w = c - Gr * lambda;
      int best = -1;
      double bw = 1e-15 * (cscale + (Gr * lambda).cwiseAbs().maxCoeff());
      for (int i = 0; i < f; ++i)
        if (!free[static_cast<std::size_t>(i)] && w(i) > bw) {
          bw = w(i);
          best = i;
        }
      if (best < 0) {
        done = true;
        break;
      }
      free[static_cast<std::size_t>(best)] = 1;
    } else {
      double alpha = 1.0;
      int blocking = -1;
      for (int i : F)
        if (!(z(i) > 0.0)) {
          const double a = lambda(i) / (lambda(i) - z(i));
          if (a < alpha) {
            alpha = a;
            blocking = i;
          }
        }
      lambda += alpha * (z - lambda);
      for (int i : F)
        if (i == blocking || lambda(i) <= 0.0) {
          lambda(i) = 0.0;
          free[static_cast<std::size_t>(i)] = 0;
        }
    }
  }
  if (!done) throw NumericalFailure("dual qp: active set did not terminate");

  DualSolution out;
  out.lambda = lambda;
  out.value = -lambda.dot(G * lambda) + 2.0 * lambda.dot(c);
  const Vec grad = 2.0 * (c - G * lambda);
  double r = 0.0;
  for (int i = 0; i < f; ++i) r = std::max(r, lambda(i) > 0.0 ? std::abs(grad(i)) : std::max(0.0, grad(i)));
  out.kkt_residual = r;
  return out;
}

DualSolution discrete_dual(const Vec& x, const Mat& P, const Polytope& obstacle) {
  const Mat G = obstacle.A * P * obstacle.A.transpose();
  const Vec c = obstacle.A * x - obstacle.b;
  return maximize_dual_qp(symmetrize(G), c);
}

std::pair<double, double> transition_quadratics(const TransitionQuery& q, const Vec& lambda) {
  const Vec al = q.obstacle.A.transpose() * lambda;
  const double g1 = -al.dot(q.P_prev * al) + 2.0 * lambda.dot(q.obstacle.A * q.x_prev - q.obstacle.b);
  const double g2 = -al.dot((q.P_prev + q.W) * al) + 2.0 * lambda.dot(q.obstacle.A * q.x_next - q.obstacle.b);
  return {g1, g2};
}

TransitionDual transition_dual(const TransitionQuery& q, std::optional<double> decide_at, bool stop_when_safe) {
  const Mat& A = q.obstacle.A;
  const Mat G0 = symmetrize(A * q.P_prev * A.transpose());
  const Mat GW = symmetrize(A * q.W * A.transpose());
  const Vec c0 = A * q.x_prev - q.obstacle.b;
  const Vec cd = A * (q.x_next - q.x_prev);

  struct Probe {
    double s;
    Vec lambda;
    double value;
    double slope;  // dD/ds at s (Danskin)
  };
  auto probe = [&](double s) {
    const DualSolution sol = maximize_dual_qp(G0 + s * GW, c0 + s * cd);
    return Probe{s, sol.lambda, sol.value, -sol.lambda.dot(GW * sol.lambda) + 2.0 * sol.lambda.dot(cd)};
  };
  auto certified = [&](const Vec& lambda) {
    const auto [g1, g2] = transition_quadratics(q, lambda);
    return std::min(g1, g2);
  };

  TransitionDual out;
  Probe lo = probe(0.0);
  out.upper = lo.value;
  if (lo.slope >= 0.0 || (decide_at && lo.value < *decide_at)) {
    out.lambda = lo.lambda;
    out.value = certified(lo.lambda);
    out.s_star = 0.0;
    return out;
  }
  Probe hi = probe(1.0);
  out.upper = std::min(out.upper, hi.value);
  if (hi.slope <= 0.0 || (decide_at && hi.value < *decide_at)) {
    const Probe& best = hi.value < lo.value ? hi : lo;
    out.lambda = best.lambda;
    out.value = certified(best.lambda);
    out.s_star = best.s;
    return out;
  }

  for (int it = 0; it < 200; ++it) {
    // Tangent lines at lo and hi meet at the lower bound; the matching convex
    // combination of multipliers attains it for both endpoints at once.
    const double mu = hi.slope / (hi.slope - lo.slope);
    const Vec lam = mu * lo.lambda + (1.0 - mu) * hi.lambda;
    const double lb = certified(lam);
    out.lambda = lam;
    out.value = lb;
    if (decide_at && stop_when_safe && lb >= *decide_at) return out;
    if (out.upper - lb <= 1e-12 * std::max(1.0, std::abs(out.upper))) return out;
    if (hi.s - lo.s <= 1e-15) return out;

    const double sx = (hi.value - lo.value + lo.slope * lo.s - hi.slope * hi.s) / (lo.slope - hi.slope);
    const double w = hi.s - lo.s;
    const double s = std::clamp(sx, lo.s + 0.1 * w, hi.s - 0.1 * w);
    Probe mid = probe(s);
    if (mid.value < out.upper) {
      out.upper = mid.value;
      out.s_star = s;
    }
    if (decide_at && mid.value < *decide_at) {
      out.lambda = mid.lambda;
      out.value = certified(mid.lambda);
      return out;
    }
    if (mid.slope == 0.0) {
      out.lambda = mid.lambda;
      out.value = certified(mid.lambda);
      out.s_star = s;
      return out;
    }
    if (mid.slope > 0.0)
      hi = std::move(mid);
    else
      lo = std::move(mid);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::optional<DualCertificate> discrete_certificate(const Vec& x_i, const Mat& Q_i, const Polytope& obstacle,
                                                    double chi2) {
  const DualSolution sol = discrete_dual(x_i, inverse_spd(Q_i), obstacle);
  if (sol.value < chi2 - certificate_tol(chi2)) return std::nullopt;
  return DualCertificate{sol.lambda, sol.value - chi2};
}

namespace {

void for_each_subset(int f, int k, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> idx(static_cast<std::size_t>(k));
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == k) {
      fn(idx);
      return;
    }
    for (int i = start; i < f; ++i) {
      idx[static_cast<std::size_t>(depth)] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
}

}  // namespace

double primal_min_distance(const Vec& x_i, const Mat& Q_i, const Polytope& obstacle, Vec* argmin) {
  const int f = obstacle.faces();
  const int d = obstacle.dim();
  if (obstacle.contains(x_i)) {
    if (argmin) *argmin = x_i;
    return 0.0;
  }
  const Mat Qinv = inverse_spd(Q_i);
  double best = std::numeric_limits<double>::infinity();
  Vec best_x;
  for (int k = 1; k <= std::min(d, f); ++k) {
    for_each_subset(f, k, [&](const std::vector<int>& S) {
      Mat As(k, d);
      Vec bs(k);
      for (int r = 0; r < k; ++r) {
        As.row(r) = obstacle.A.row(S[static_cast<std::size_t>(r)]);
        bs(r) = obstacle.b(S[static_cast<std::size_t>(r)]);
      }
      const Mat M = As * Qinv * As.transpose();
      Eigen::FullPivLU<Mat> lu(M);
      lu.setThreshold(1e-12);
      if (!lu.isInvertible()) return;
      const Vec mu = lu.solve(As * x_i - bs);
      const Vec x = x_i - Qinv * As.transpose() * mu;
      const Vec viol = obstacle.A * x - obstacle.b;
      for (int r = 0; r < f; ++r)
        if (viol(r) > 1e-12 * (1.0 + std::abs(obstacle.b(r)) + obstacle.A.row(r).norm() * x.norm())) return;
      const Vec dx = x - x_i;
      const double v = 0.5 * dx.dot(Q_i * dx);
      if (v < best) {
        best = v;
        best_x = x;
      }
    });
  }
  if (argmin && std::isfinite(best)) *argmin = best_x;
  return best;
}

bool discrete_oracle(const Vec& x_i, const Mat& Q_i, const Polytope& obstacle, double chi2) {
  return primal_min_distance(x_i, Q_i, obstacle) >= 0.5 * chi2;
}

bool halfspace_check(const Vec& a, double b, const Vec& x_i, const Mat& Q_i, double chi2) {
  Eigen::LLT<Mat> llt(Q_i);
  const double aqa = a.dot(llt.solve(a));
  return a.dot(x_i) + std::sqrt(chi2 * aqa) <= b;
}

std::optional<double> lemma3_witness(const Vec& a, double b, const Vec& x_i, const Mat& Q_i, double gamma) {
  const double chi2 = 1.0 / (gamma * gamma);
  const double slack = b - a.dot(x_i);
  if (!(slack > 0.0)) return std::nullopt;
  Eigen::LLT<Mat> llt(Q_i);
  const double aqa = a.dot(llt.solve(a));
  // Allow the boundary case up to rounding.
  if (std::sqrt(chi2 * aqa) > slack * (1.0 + 1e-12)) return std::nullopt;
  return 1.0 / (gamma * slack);
}

std::pair<Mat, Mat> lemma3_blocks(const Vec& a, double b, const Vec& x_i, const Mat& Q_i, double gamma, double C) {
  const int d = static_cast<int>(a.size());
  Mat b1(2, 2);
  b1 << b - a.dot(x_i), 1.0, 1.0, gamma * C;
  Mat b2(d + 1, d + 1);
  b2(0, 0) = 1.0;
  b2.block(0, 1, 1, d) = C * a.transpose();
  b2.block(1, 0, d, 1) = C * a;
  b2.block(1, 1, d, d) = Q_i;
  return {b1, b2};
}

std::optional<DualCertificate> continuous_certificate(const TransitionQuery& q, bool decide_only) {
  const double tol = certificate_tol(q.chi2);
  const TransitionDual td = transition_dual(q, q.chi2 - tol, decide_only);
  if (td.value >= q.chi2 - tol) return DualCertificate{td.lambda, td.value - q.chi2};
  return std::nullopt;
}

std::optional<DualCertificate> continuous_certificate_conic(const TransitionQuery& q) {
  using namespace conic;
  const int f = q.obstacle.faces();
  ConicProblem prob;
  const VecVar lam = prob.add_vector("lambda", f);
  const int t = prob.add_scalar("t");
  prob.add_objective(LinExpr::var(t, -1.0));
  for (int i = 0; i < f; ++i) prob.add_nonneg(lam(i));
  const Mat& A = q.obstacle.A;
  auto add_branch = [&](const Mat& P, const Vec& x) {
    const Mat L = Eigen::LLT<Mat>(P).matrixL();
    const Mat B = L.transpose() * A.transpose();  // B lambda = L^T A^T lambda
    std::vector<LinExpr> u;
    for (int r = 0; r < B.rows(); ++r) u.push_back(dot(B.row(r).transpose(), lam.exprs()));
    const Vec c = A * x - q.obstacle.b;
    prob.add_quadratic_le(u, dot(2.0 * c, lam.exprs()) - LinExpr::var(t));
  };
  add_branch(q.P_prev, q.x_prev);
  add_branch(q.P_prev + q.W, q.x_next);
  const ConicSolution sol = solve(prob);
  if (sol.status != Status::optimal) throw NumericalFailure(std::string("conic certificate: ") + to_string(sol.status));
  const Vec lambda = sol.value(lam).cwiseMax(0.0);
  const auto [g1, g2] = transition_quadratics(q, lambda);
  const double value = std::min(g1, g2);
  if (-sol.objective < q.chi2 - 1e-7 * std::max(1.0, q.chi2)) return std::nullopt;
  return DualCertificate{lambda, value - q.chi2};
}

double continuous_oracle_value(const TransitionQuery& q, int s_grid) {
  if (s_grid < 2) throw DomainError("continuous oracle: grid needs at least two points");
  double best = std::numeric_limits<double>::infinity();
  for (int g = 0; g < s_grid; ++g) {
    const double s = static_cast<double>(g) / (s_grid - 1);
    const Vec x = q.x_prev + s * (q.x_next - q.x_prev);
    const Mat P = q.P_prev + s * q.W;
    best = std::min(best, 2.0 * primal_min_distance(x, inverse_spd(P), q.obstacle));
  }
  return best;
}

bool continuous_oracle(const TransitionQuery& q, int s_grid) {
  if (s_grid < 2) throw DomainError("continuous oracle: grid needs at least two points");
  for (int g = 0; g < s_grid; ++g) {
    const double s = static_cast<double>(g) / (s_grid - 1);
    const Vec x = q.x_prev + s * (q.x_next - q.x_prev);
    const Mat P = q.P_prev + s * q.W;
    if (!discrete_oracle(x, inverse_spd(P), q.obstacle, q.chi2)) return false;
  }
  return true;
}

TransitionVerdict transition_safe(const Vec& x_prev, const Vec& x_next, const Mat& P_prev, const Mat& W,
                                  const Environment& env, double chi2, bool stop_at_first, bool decide_only) {
  TransitionVerdict v;
  v.certificates.resize(env.unified.size());
  TransitionQuery q{x_prev, x_next, P_prev, W, Polytope{}, chi2};
  for (std::size_t j = 0; j < env.unified.size(); ++j) {
    q.obstacle = env.unified[j];
    try {
      v.certificates[j] = continuous_certificate(q, decide_only);
    } catch (const NumericalFailure& e) {
      throw NumericalFailure(std::string(e.what()) + " (obstacle " + std::to_string(j) + ")");
    }
    if (!v.certificates[j]) {
      if (v.safe) v.first_unsafe = static_cast<int>(j);
      v.safe = false;
      if (stop_at_first) break;
    }
  }
  return v;
}

bool admissible_final(const Vec& x_K, const Mat& Q_K, const Mat& S_K, const Environment& env, double chi2) {
  const Mat info = Q_K + S_K;
  for (const auto& h : env.target_out)
    if (!discrete_certificate(x_K, info, h, chi2)) return false;
  return true;
}

PathVerdict certify_path(const BeliefPath& path, const Environment& env, const ProcessModel& model, double chi2) {
  PathVerdict out;
  for (int k = 1; k <= path.K(); ++k) {
    const auto& prev = path.steps[static_cast<std::size_t>(k - 1)];
    const auto v = transition_safe(prev.x, path.steps[static_cast<std::size_t>(k)].x, prev.posterior_cov(), model.W,
                                   env, chi2, true, true);
    if (!v.safe) {
      out.transitions_safe = false;
      out.first_unsafe_k = k;
      out.first_unsafe_j = v.first_unsafe;
      break;
    }
  }
  const auto& last = path.steps.back();
  out.final_admissible = admissible_final(last.x, last.Q, last.S, env, chi2);
  return out;
}

}  // namespace minsense
