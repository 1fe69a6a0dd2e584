#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "minsense/belief.hpp"
#include "minsense/collision.hpp"
#include "minsense/conic.hpp"
#include "minsense/geometry.hpp"

namespace minsense {

/// Iterate of the convex-concave procedure. Indices follow the transition
/// number k = 1..K, stored at position k - 1.
struct CcpState {
  int iter = 0;
  BeliefPath path;                           // steps 0..K; step 0 is fixed
  std::vector<std::vector<Vec>> lambda;      // [k-1][j], length = faces of obstacle j
  std::vector<std::vector<double>> R;        // [k-1][j], unused for k = 1
  std::vector<std::vector<double>> R_hat;    // [k-1][j]
  Vec C;                                     // one per target face
  std::vector<double> cost_history;

  int K() const { return path.K(); }
};

struct SmootherConfig {
  int max_iters = 15;
  double tol = 1e-6;          // stop when the cost decrease falls below this
  double alpha = 1.0;
  SafetyConfig safety = SafetyConfig::from_probability(0.9, 2);
  double q_floor = 1e-9;      // Q >= q_floor I
  double damping = 1.0;       // 1 keeps the subproblem solution as is
  bool recertify = false;     // run the collision checks on every iterate
  conic::Settings solver;
};

/// Multipliers making every transition of `path` certificate-safe. Throws
/// InitInfeasible(k, j) at the first pair without one.
std::vector<std::vector<Vec>> init_lambda(const BeliefPath& path, const Environment& env, const SafetyConfig& safety);

/// Schur-complement margins of the two matrix inequalities of the multiplier
/// feasibility program for one (transition, obstacle) pair:
///   2 lambda^T (A x - b) - chi2 - lambda^T A M^{-1} A^T lambda
/// at (x_prev, M_prev) and at (x_next, Q_next). Both >= 0 iff both LMIs hold.
std::pair<double, double> lambda_lmi_margins(const Vec& lambda, const Polytope& obstacle, const Vec& x_prev,
                                             const Mat& M_prev, const Vec& x_next, const Mat& Q_next, double chi2);

/// h3(Q, S) = logdet(Q + S) - logdet Q.
double h3(const Mat& Q, const Mat& S);

/// h3 with logdet(Q + S) replaced by its tangent at (Qt, St):
///   logdet(Qt + St) - logdet Q + Tr((Qt + St)^{-1} (Q + S - Qt - St)).
struct H3Linearization {
  double logdet_ref = 0.0;
  Mat grad;  // (Qt + St)^{-1}
  Mat ref;   // Qt + St

  double operator()(const Mat& Q, const Mat& S) const;
};

H3Linearization linearize_h3(const Mat& Qt, const Mat& St);

/// h2(R, x, lambda) = R + chi2 + ||Ax - b||^2 + ||lambda||^2 - ||Ax - b + lambda||^2.
double h2(double R, const Vec& x, const Vec& lambda, const Polytope& obstacle, double chi2);

/// h2 with its concave part replaced by the tangent at (xt, lt).
struct H2Linearization {
  Mat A;
  Vec b;
  double chi2 = 0.0;
  Vec xt, lt;
  Vec g;  // A xt - b + lt

  double operator()(double R, const Vec& x, const Vec& lambda) const;
};

H2Linearization linearize_h2(const Vec& xt, const Vec& lt, const Polytope& obstacle, double chi2);

/// Variable and constraint counts of an assembled subproblem.
struct Census {
  int vars_x = 0, vars_Q = 0, vars_S = 0, vars_lambda = 0, vars_R = 0, vars_R_hat = 0, vars_C = 0, vars_epi = 0;
  int kf_lmi = 0, target_lmi = 0, initial_lmi = 0, h1_lmi = 0, h2_quad = 0, epi_quad = 0;
  int nonneg = 0, psd_domain = 0, logdet_terms = 0;

  int total_vars() const {
    return vars_x + vars_Q + vars_S + vars_lambda + vars_R + vars_R_hat + vars_C + vars_epi;
  }
  int total_constraints() const {
    return kf_lmi + target_lmi + initial_lmi + h1_lmi + h2_quad + epi_quad + nonneg + psd_domain;
  }
};

/// Convex subproblem around `state` plus handles to read its solution back.
struct Subproblem {
  conic::ConicProblem problem;
  std::vector<conic::VecVar> x;               // k = 1..K
  std::vector<conic::SymVar> Q, S;            // k = 1..K
  std::vector<std::vector<conic::VecVar>> lambda;
  std::vector<std::vector<int>> R, R_hat;     // R[0][*] = -1
  std::vector<int> C;
  std::vector<int> epi;                       // epigraph of ||x_k - x_{k-1}||^2
  double objective_constant = 0.0;
  Census census;

  /// Variable vector that reproduces `state` (epigraphs at their minimum).
  Vec point_of(const CcpState& state) const;
  /// Subproblem objective (with its constant) at a variable vector.
  double objective(const Vec& v) const;
};

Subproblem build_subproblem(const CcpState& state, const Environment& env, const ProcessModel& model,
                            const SmootherConfig& config);

/// Smallest feasible slacks for the current multipliers and beliefs.
void fill_slacks(CcpState& state, const Environment& env, double chi2);

/// Builds the initial CCP state from a feasible path.
CcpState initial_state(const BeliefPath& path, const Environment& env, const SmootherConfig& config);

/// Largest violation of the original (not linearized) constraints at `state`:
/// Kalman LMIs, target conditions, the h1 inequalities and h2 <= 0.
struct FullProblemViolation {
  double kf = 0.0;
  double initial = 0.0;
  double target = 0.0;
  double h1 = 0.0;
  double h2 = 0.0;
  double max() const;
};

FullProblemViolation full_problem_violation(const CcpState& state, const Environment& env, const ProcessModel& model,
                                       double chi2);

/// max_k ||Q_k^{-1} - (Q_{k-1} + S_{k-1})^{-1} - W||_F.
double check_kf_tightness(const BeliefPath& path, const ProcessModel& model);
double check_kf_tightness(const CcpState& state, const ProcessModel& model);

struct StepOutcome {
  CcpState state;
  conic::Status status = conic::Status::optimal;
  bool stalled = false;
  double kf_residual_raw = 0.0;   // before the Kalman re-propagation
  double solve_ms = 0.0;
  int newton_steps = 0;
};

/// One CCP iteration. Throws SubproblemInfeasible when the solver proves
/// infeasibility; a stalled solve returns the previous state flagged.
StepOutcome ccp_step(const CcpState& state, const Environment& env, const ProcessModel& model,
                     const SmootherConfig& config);

struct TraceRow {
  int iter = 0;
  double cost = 0.0;
  double cost_control = 0.0;
  double cost_info = 0.0;
  double viol = 0.0;
  double ms = 0.0;
};

struct SmoothResult {
  BeliefPath path;
  CcpState state;
  std::vector<double> cost_history;
  std::vector<TraceRow> trace;
  std::vector<double> kf_residual_raw;   // per iteration, from the solver output
  std::vector<PathVerdict> verdicts;     // per iteration when recertify is on
  PathVerdict final_verdict;
  bool converged = false;
  bool stalled = false;
  bool all_optimal = true;
};

/// init_lambda followed by CCP iterations until max_iters or a cost decrease
/// below tol. `on_iterate` (optional) sees every accepted iterate.
SmoothResult smooth(const BeliefPath& path, const Environment& env, const ProcessModel& model,
                    const SmootherConfig& config,
                    const std::function<void(const CcpState&)>& on_iterate = {});

}  // namespace minsense
