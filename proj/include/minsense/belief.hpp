#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "minsense/geometry.hpp"
#include "minsense/linalg.hpp"

namespace minsense {

/// Discrete-time random walk x_k = x_{k-1} + u_{k-1} + w_{k-1}, w ~ N(0, W).
/// W is the per-step covariance (noise intensity times dt).
struct ProcessModel {
  Mat W;
  double dt = 1.0;

  int dim() const { return static_cast<int>(W.rows()); }
};

void validate_model(const ProcessModel& model);

/// Belief in information form. Q is the prior information (P_{k-1} + W)^{-1},
/// S the information added by the measurement at this step.
struct BeliefState {
  Vec x;
  Mat Q;
  Mat S;

  Mat posterior_cov() const { return inverse_spd(Q + S); }
  Mat prior_cov() const { return inverse_spd(Q); }
};

/// Steps 0..K. Step 0 carries the initial belief with Q_0 + S_0 = P_0^{-1}
/// (stored as Q_0 = P_0^{-1}, S_0 = 0).
struct BeliefPath {
  std::vector<BeliefState> steps;
  double alpha = 0.0;

  int K() const { return static_cast<int>(steps.size()) - 1; }
};

void validate_path(const BeliefPath& path);

Mat propagate_prior(const Mat& P, const ProcessModel& model);

/// Posterior covariance (P_hat^{-1} + S)^{-1}.
Mat apply_measurement(const Mat& P_hat, const Mat& S);

struct CostBreakdown {
  double control = 0.0;
  double info = 0.0;  // already weighted by alpha
  double total() const { return control + info; }
};

CostBreakdown step_cost_parts(const Vec& x_prev, const Vec& x_next, const Mat& Q, const Mat& S, double alpha);

/// ||x_next - x_prev||^2 + (alpha/2) (logdet(Q + S) - logdet Q).
double step_cost(const Vec& x_prev, const Vec& x_next, const Mat& Q, const Mat& S, double alpha);

CostBreakdown path_cost_parts(const BeliefPath& path);
double path_cost(const BeliefPath& path);

/// Mean and covariance along a transition at s in [0, 1].
std::pair<Vec, Mat> interpolate(const Vec& x_prev, const Vec& x_next, const Mat& P_prev, const ProcessModel& model,
                                double s);

/// Rebuild a path whose Q's follow the Kalman recursion exactly from P_0 and the
/// given means and measurement informations (means.size() == infos.size() == K + 1;
/// infos[0] is ignored).
BeliefPath kalman_path(const std::vector<Vec>& means, const std::vector<Mat>& infos, const Mat& P0,
                       const ProcessModel& model, double alpha);

struct MonteCarloReport {
  std::vector<double> per_transition;  // max over the s-grid, one entry per k = 1..K
  double max_frequency = 0.0;
  int worst_k = 0;
  double worst_s = 0.0;
};

/// Empirical instantaneous collision frequency against the unified obstacle set.
/// Each (k, s) pair draws from its own stream derived from seed, so the result is
/// independent of how the work is partitioned.
MonteCarloReport monte_carlo_marginal_collision(const BeliefPath& path, const Environment& env,
                                                const ProcessModel& model, int n_samples, int s_grid,
                                                std::uint64_t seed);

/// SplitMix64 finalizer; used to derive named sub-streams from a root seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace minsense
