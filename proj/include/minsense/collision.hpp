#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "minsense/belief.hpp"
#include "minsense/geometry.hpp"
#include "minsense/linalg.hpp"

namespace minsense {

/// Confidence level and the derived chi-squared quantities.
struct SafetyConfig {
  double pr = 0.9;
  double chi2 = 0.0;
  double gamma = 0.0;  // chi2^{-1/2}
  int d = 2;

  static SafetyConfig from_probability(double pr, int d);
  static SafetyConfig from_chi2(double chi2, int d);
};

/// Multiplier lambda >= 0 (one entry per obstacle face) and the certified
/// margin: value of the dual quadratic(s) at lambda minus chi2.
struct DualCertificate {
  Vec lambda;
  double margin = 0.0;
};

struct TransitionQuery {
  Vec x_prev;
  Vec x_next;
  Mat P_prev;  // posterior covariance at the start of the transition
  Mat W;
  Polytope obstacle;
  double chi2 = 0.0;
};

/// Default verdict tolerance: certificates are accepted when the optimum is at
/// least chi2 - tol.
double certificate_tol(double chi2);

// --- dual quadratic programs ------------------------------------------------

struct DualSolution {
  Vec lambda;
  double value = 0.0;  // -lambda^T G lambda + 2 lambda^T c at lambda
  double kkt_residual = 0.0;
};

/// max_{lambda >= 0} -lambda^T G lambda + 2 lambda^T c for PSD G, by a primal
/// active-set method on a tiny ridge-regularized G. Throws NumericalFailure if
/// the active set cycles.
DualSolution maximize_dual_qp(const Mat& G, const Vec& c);

/// Dual value of the ellipse/polytope separation for belief (x, P) (covariance form).
DualSolution discrete_dual(const Vec& x, const Mat& P, const Polytope& obstacle);

struct TransitionDual {
  Vec lambda;            // common multiplier
  double value = 0.0;    // min(g1, g2) at lambda (a certified lower bound)
  double upper = 0.0;    // smallest discrete dual value seen along s (upper bound)
  double s_star = 0.0;   // minimizing interpolation parameter
};

/// max_{lambda >= 0} min(g1, g2). Equals min over s in [0,1] of the discrete
/// dual at (x[s], P[s]); that function is convex in s, so the search is 1-D.
/// When `decide_at` is given, stops once the optimum is known to lie below it,
/// and also once it is known to lie above it if `stop_when_safe` is set.
TransitionDual transition_dual(const TransitionQuery& q, std::optional<double> decide_at = std::nullopt,
                               bool stop_when_safe = true);

/// g1 and g2 evaluated at a multiplier.
std::pair<double, double> transition_quadratics(const TransitionQuery& q, const Vec& lambda);

// --- certificates -----------------------------------------------------------

/// Static ellipse E(x_i, Q_i^{-1}) versus polytope. Some iff the dual optimum
/// reaches chi2 - tol.
std::optional<DualCertificate> discrete_certificate(const Vec& x_i, const Mat& Q_i, const Polytope& obstacle,
                                                    double chi2);

/// Primal value V* = min_{A x <= b} 0.5 (x - x_i)^T Q_i (x - x_i) by enumerating
/// active sets of size <= d. Returns +inf for an empty polytope.
double primal_min_distance(const Vec& x_i, const Mat& Q_i, const Polytope& obstacle, Vec* argmin = nullptr);

/// Brute-force primal check: V* >= chi2 / 2.
bool discrete_oracle(const Vec& x_i, const Mat& Q_i, const Polytope& obstacle, double chi2);

/// Ellipse contained in the half-space {a^T x <= b}:
/// a^T x_i + sqrt(chi2 a^T Q_i^{-1} a) <= b.
bool halfspace_check(const Vec& a, double b, const Vec& x_i, const Mat& Q_i, double chi2);

/// Scalar C >= 0 making both 2x2 / (d+1)x(d+1) blocks PSD, or nullopt when the
/// half-space containment fails.
std::optional<double> lemma3_witness(const Vec& a, double b, const Vec& x_i, const Mat& Q_i, double gamma);

/// The two blocks [b - a^T x, 1; 1, gamma C] and [1, C a^T; a C, Q].
std::pair<Mat, Mat> lemma3_blocks(const Vec& a, double b, const Vec& x_i, const Mat& Q_i, double gamma, double C);

/// Common-multiplier certificate for the whole transition. By default the
/// multiplier is the maximizer; with `decide_only` the search stops at the first
/// multiplier that clears chi2 (same verdict, smaller margin).
std::optional<DualCertificate> continuous_certificate(const TransitionQuery& q, bool decide_only = false);

/// Same certificate computed as a single conic program (maximize t subject to
/// g1 >= t, g2 >= t, lambda >= 0). Independent route used for cross-checks.
std::optional<DualCertificate> continuous_certificate_conic(const TransitionQuery& q);

/// Grid oracle: primal check at every s on a uniform grid. One-sided: a coarse
/// grid can miss violations confined between grid points.
bool continuous_oracle(const TransitionQuery& q, int s_grid);

/// Smallest 2 V*(s) over the grid (for diagnostics and tolerance bands).
double continuous_oracle_value(const TransitionQuery& q, int s_grid);

struct TransitionVerdict {
  bool safe = true;
  std::vector<std::optional<DualCertificate>> certificates;  // one per unified obstacle
  int first_unsafe = -1;
};

/// Certifies one transition against every unified obstacle.
TransitionVerdict transition_safe(const Vec& x_prev, const Vec& x_next, const Mat& P_prev, const Mat& W,
                                  const Environment& env, double chi2, bool stop_at_first = false,
                                  bool decide_only = false);

/// Definition of an admissible final state: the posterior ellipse of (Q_K + S_K)
/// lies inside the target, certified against every target-complement half-space.
bool admissible_final(const Vec& x_K, const Mat& Q_K, const Mat& S_K, const Environment& env, double chi2);

/// Every transition and the final state of a path.
struct PathVerdict {
  bool transitions_safe = true;
  bool final_admissible = true;
  int first_unsafe_k = -1;
  int first_unsafe_j = -1;
  bool ok() const { return transitions_safe && final_admissible; }
};

PathVerdict certify_path(const BeliefPath& path, const Environment& env, const ProcessModel& model, double chi2);

}  // namespace minsense
