#include "minsense/belief.hpp"

#include <random>

#include "minsense/errors.hpp"

namespace minsense {

void validate_model(const ProcessModel& model) {
  if (model.W.rows() != model.W.cols()) throw ShapeMismatch("process model: W is not square");
  if (!is_symmetric(model.W, 1e-12)) throw DomainError("process model: W is not symmetric");
  if (min_eigenvalue(model.W) < -1e-14) throw DomainError("process model: W is not positive semidefinite");
  if (!(model.dt > 0.0)) throw DomainError("process model: dt must be positive");
}

void validate_path(const BeliefPath& path) {
  if (path.K() < 1) throw DomainError("belief path needs at least one transition");
  const auto d = path.steps.front().x.size();
  for (const auto& st : path.steps) {
    if (st.x.size() != d || st.Q.rows() != d || st.Q.cols() != d || st.S.rows() != d || st.S.cols() != d)
      throw ShapeMismatch("belief path: inconsistent state dimensions");
    if (min_eigenvalue(st.Q) <= 0.0) throw DomainError("belief path: prior information is not positive definite");
    if (min_eigenvalue(st.S) < -1e-10) throw DomainError("belief path: measurement information is not PSD");
  }
}

Mat propagate_prior(const Mat& P, const ProcessModel& model) {
  if (P.rows() != model.W.rows()) throw ShapeMismatch("propagate_prior: dimension mismatch");
  return P + model.W;
}

Mat apply_measurement(const Mat& P_hat, const Mat& S) {
  if (P_hat.rows() != S.rows()) throw ShapeMismatch("apply_measurement: dimension mismatch");
  if (condition_spd(P_hat) > 1e12) throw SingularMatrix("apply_measurement: prior covariance is ill-conditioned");
  return inverse_spd(inverse_spd(P_hat) + S);
}

CostBreakdown step_cost_parts(const Vec& x_prev, const Vec& x_next, const Mat& Q, const Mat& S, double alpha) {
  CostBreakdown c;
  c.control = (x_next - x_prev).squaredNorm();
  // An all-zero S cancels exactly; skip the factorization to keep the info term at 0.
  if (S.cwiseAbs().maxCoeff() == 0.0)
    c.info = 0.0;
  else
    c.info = 0.5 * alpha * (logdet_spd(Q + S) - logdet_spd(Q));
  return c;
}

double step_cost(const Vec& x_prev, const Vec& x_next, const Mat& Q, const Mat& S, double alpha) {
  return step_cost_parts(x_prev, x_next, Q, S, alpha).total();
}

CostBreakdown path_cost_parts(const BeliefPath& path) {
  CostBreakdown acc;
  for (int k = 1; k <= path.K(); ++k) {
    const auto& st = path.steps[k];
    const auto c = step_cost_parts(path.steps[k - 1].x, st.x, st.Q, st.S, path.alpha);
    acc.control += c.control;
    acc.info += c.info;
  }
  return acc;
}

double path_cost(const BeliefPath& path) { return path_cost_parts(path).total(); }

std::pair<Vec, Mat> interpolate(const Vec& x_prev, const Vec& x_next, const Mat& P_prev, const ProcessModel& model,
                                double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw DomainError("interpolate: s must lie in [0, 1]");
  return {x_prev + s * (x_next - x_prev), P_prev + s * model.W};
}

BeliefPath kalman_path(const std::vector<Vec>& means, const std::vector<Mat>& infos, const Mat& P0,
                       const ProcessModel& model, double alpha) {
  if (means.size() != infos.size() || means.size() < 2) throw ShapeMismatch("kalman_path: inconsistent inputs");
  const int d = static_cast<int>(P0.rows());
  BeliefPath path;
  path.alpha = alpha;
  path.steps.push_back({means[0], inverse_spd(P0), Mat::Zero(d, d)});
  Mat P = P0;
  for (std::size_t k = 1; k < means.size(); ++k) {
    BeliefState st;
    st.x = means[k];
    st.Q = inverse_spd(P + model.W);
    st.S = symmetrize(infos[k]);
    P = inverse_spd(st.Q + st.S);
    path.steps.push_back(std::move(st));
  }
  return path;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

MonteCarloReport monte_carlo_marginal_collision(const BeliefPath& path, const Environment& env,
                                                const ProcessModel& model, int n_samples, int s_grid,
                                                std::uint64_t seed) {
  if (n_samples < 1) throw DomainError("monte carlo: n_samples must be positive");
  if (s_grid < 2) throw DomainError("monte carlo: s grid needs at least two points");
  MonteCarloReport rep;
  rep.per_transition.assign(path.K(), 0.0);
  const int d = model.dim();
  for (int k = 1; k <= path.K(); ++k) {
    const auto& prev = path.steps[k - 1];
    const Mat P_prev = prev.posterior_cov();
    for (int g = 0; g < s_grid; ++g) {
      const double s = static_cast<double>(g) / (s_grid - 1);
      const auto [mean, cov] = interpolate(prev.x, path.steps[k].x, P_prev, model, s);
      Eigen::LLT<Mat> llt(cov);
      const Mat L = llt.matrixL();
      std::mt19937_64 rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(k)), static_cast<std::uint64_t>(g)));
      std::normal_distribution<double> normal;
      int hits = 0;
      Vec z(d);
      for (int n = 0; n < n_samples; ++n) {
        for (int i = 0; i < d; ++i) z(i) = normal(rng);
        const Vec x = mean + L * z;
        for (const auto& obs : env.unified)
          if (obs.contains(x)) {
            ++hits;
            break;
          }
      }
      const double freq = static_cast<double>(hits) / n_samples;
      if (freq > rep.per_transition[k - 1]) rep.per_transition[k - 1] = freq;
      if (freq > rep.max_frequency) {
        rep.max_frequency = freq;
        rep.worst_k = k;
        rep.worst_s = s;
      }
    }
  }
  return rep;
}

}  // namespace minsense
