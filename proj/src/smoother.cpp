#include "minsense/smoother.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "minsense/errors.hpp"

namespace minsense {

using conic::AffineMatrix;
using conic::LinExpr;

namespace {

Mat info_at(const BeliefPath& p, int k) { return p.steps[static_cast<std::size_t>(k)].Q + p.steps[static_cast<std::size_t>(k)].S; }

// lambda^T A M^{-1} A^T lambda
double weighted_norm(const Vec& lambda, const Mat& A, const Mat& M) {
  const Vec u = A.transpose() * lambda;
  return u.dot(Eigen::LLT<Mat>(M).solve(u));
}

double schur_margin(const Vec& lambda, const Polytope& obs, const Vec& x, const Mat& M, double chi2) {
  return 2.0 * lambda.dot(obs.A * x - obs.b) - chi2 - weighted_norm(lambda, obs.A, M);
}

std::vector<LinExpr> exprs_of(const Vec& c) {
  std::vector<LinExpr> out;
  for (Eigen::Index i = 0; i < c.size(); ++i) out.emplace_back(c(i));
  return out;
}

// A x - b for an expression vector x.
std::vector<LinExpr> affine_rows(const Polytope& obs, const std::vector<LinExpr>& x) {
  std::vector<LinExpr> out;
  for (int r = 0; r < obs.faces(); ++r) out.push_back(conic::dot(obs.A.row(r).transpose(), x) - obs.b(r));
  return out;
}

// [[s, lambda^T A], [A^T lambda, M]]
AffineMatrix h1_matrix(const LinExpr& s, const conic::VecVar& lam, const Polytope& obs, const AffineMatrix& M) {
  const int d = obs.dim();
  AffineMatrix m(1 + d);
  m.set(0, 0, s);
  for (int c = 0; c < d; ++c) m.set(0, 1 + c, conic::dot(obs.A.col(c), lam.exprs()));
  m.set_block(1, 1, M);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// multipliers

std::pair<double, double> lambda_lmi_margins(const Vec& lambda, const Polytope& obstacle, const Vec& x_prev,
                                             const Mat& M_prev, const Vec& x_next, const Mat& Q_next, double chi2) {
  return {schur_margin(lambda, obstacle, x_prev, M_prev, chi2), schur_margin(lambda, obstacle, x_next, Q_next, chi2)};
}

std::vector<std::vector<Vec>> init_lambda(const BeliefPath& path, const Environment& env, const SafetyConfig& safety) {
  validate_path(path);
  const int K = path.K();
  const double chi2 = safety.chi2;
  const double tol = certificate_tol(chi2);
  std::vector<std::vector<Vec>> out(static_cast<std::size_t>(K));
  for (int k = 1; k <= K; ++k) {
    const Mat M_prev = info_at(path, k - 1);
    const Mat& Q_next = path.steps[static_cast<std::size_t>(k)].Q;
    TransitionQuery q;
    q.x_prev = path.steps[static_cast<std::size_t>(k - 1)].x;
    q.x_next = path.steps[static_cast<std::size_t>(k)].x;
    q.P_prev = inverse_spd(M_prev);
    // growth implied by the stored Q_k; equals W on a Kalman-consistent path
    q.W = symmetrize(inverse_spd(Q_next) - q.P_prev);
    q.chi2 = chi2;
    for (int j = 0; j < env.num_unified(); ++j) {
      q.obstacle = env.unified[static_cast<std::size_t>(j)];
      auto ok = [&](const Vec& lam) {
        const auto [m1, m2] = lambda_lmi_margins(lam, q.obstacle, q.x_prev, M_prev, q.x_next, Q_next, chi2);
        return std::min(m1, m2) >= -tol;
      };
      std::optional<Vec> found;
      if (min_eigenvalue(q.W) >= 0.0) {
        if (auto cert = continuous_certificate(q); cert && ok(cert->lambda)) found = cert->lambda;
      }
      if (!found) {
        try {
          if (auto cert = continuous_certificate_conic(q); cert && ok(cert->lambda)) found = cert->lambda;
        } catch (const NumericalFailure&) {
        }
      }
      if (!found) throw InitInfeasible(k, j);
      out[static_cast<std::size_t>(k - 1)].push_back(*found);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// linearizations

double h3(const Mat& Q, const Mat& S) { return logdet_spd(Q + S) - logdet_spd(Q); }

double H3Linearization::operator()(const Mat& Q, const Mat& S) const {
  return logdet_ref - logdet_spd(Q) + (grad * (Q + S - ref)).trace();
}

H3Linearization linearize_h3(const Mat& Qt, const Mat& St) {
  H3Linearization h;
  h.ref = Qt + St;
  h.logdet_ref = logdet_spd(h.ref);
  h.grad = inverse_spd(h.ref);
  return h;
}

double h2(double R, const Vec& x, const Vec& lambda, const Polytope& obstacle, double chi2) {
  const Vec r = obstacle.A * x - obstacle.b;
  return R + chi2 + r.squaredNorm() + lambda.squaredNorm() - (r + lambda).squaredNorm();
}

double H2Linearization::operator()(double R, const Vec& x, const Vec& lambda) const {
  const Vec r = A * x - b;
  return R + chi2 + r.squaredNorm() + lambda.squaredNorm() - g.squaredNorm() -
         2.0 * g.dot(A * (x - xt) + lambda - lt);
}

H2Linearization linearize_h2(const Vec& xt, const Vec& lt, const Polytope& obstacle, double chi2) {
  if (xt.size() != obstacle.dim() || lt.size() != obstacle.faces())
    throw ShapeMismatch("linearize_h2: expansion point does not match the obstacle");
  H2Linearization h;
  h.A = obstacle.A;
  h.b = obstacle.b;
  h.chi2 = chi2;
  h.xt = xt;
  h.lt = lt;
  h.g = obstacle.A * xt - obstacle.b + lt;
  return h;
}

// ---------------------------------------------------------------------------
// state

void fill_slacks(CcpState& state, const Environment& env, double chi2) {
  const int K = state.K();
  const int J = env.num_unified();
  state.R.assign(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(J), 0.0));
  state.R_hat = state.R;
  for (int k = 1; k <= K; ++k)
    for (int j = 0; j < J; ++j) {
      const Vec& lam = state.lambda[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)];
      const Mat& A = env.unified[static_cast<std::size_t>(j)].A;
      if (k >= 2) state.R[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)] = weighted_norm(lam, A, info_at(state.path, k - 1));
      state.R_hat[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)] =
          weighted_norm(lam, A, state.path.steps[static_cast<std::size_t>(k)].Q);
    }
  const Polytope& tar = env.target;
  const Mat PK = inverse_spd(info_at(state.path, K));
  const Vec& xK = state.path.steps.back().x;
  const double gamma = 1.0 / std::sqrt(chi2);
  state.C.resize(tar.faces());
  for (int n = 0; n < tar.faces(); ++n) {
    const Vec a = tar.A.row(n).transpose();
    const double upper = 1.0 / std::sqrt(a.dot(PK * a));
    const double slack = tar.b(n) - a.dot(xK);
    const double lower = slack > 0.0 ? 1.0 / (gamma * slack) : upper;
    state.C(n) = lower <= upper ? std::sqrt(lower * upper) : upper;
  }
}

CcpState initial_state(const BeliefPath& path, const Environment& env, const SmootherConfig& config) {
  CcpState s;
  s.path = path;
  s.lambda = init_lambda(path, env, config.safety);
  fill_slacks(s, env, config.safety.chi2);
  s.cost_history.push_back(path_cost(path));
  return s;
}

double FullProblemViolation::max() const { return std::max({kf, initial, target, h1, h2}); }

FullProblemViolation full_problem_violation(const CcpState& state, const Environment& env, const ProcessModel& model,
                                       double chi2) {
  FullProblemViolation v;
  const int K = state.K();
  for (int k = 1; k <= K; ++k) {
    const Mat gap = inverse_spd(state.path.steps[static_cast<std::size_t>(k)].Q) -
                    inverse_spd(info_at(state.path, k - 1)) - model.W;
    v.kf = std::max(v.kf, -min_eigenvalue(symmetrize(gap)));
    for (int j = 0; j < env.num_unified(); ++j) {
      const Polytope& obs = env.unified[static_cast<std::size_t>(j)];
      const Vec& lam = state.lambda[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)];
      v.h1 = std::max(v.h1, -lam.minCoeff());
      const Vec& xk = state.path.steps[static_cast<std::size_t>(k)].x;
      const Vec& xp = state.path.steps[static_cast<std::size_t>(k - 1)].x;
      const double Rh = state.R_hat[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)];
      v.h1 = std::max(v.h1, weighted_norm(lam, obs.A, state.path.steps[static_cast<std::size_t>(k)].Q) - Rh);
      v.h2 = std::max(v.h2, h2(Rh, xk, lam, obs, chi2));
      if (k == 1) {
        v.initial = std::max(v.initial, -schur_margin(lam, obs, xp, info_at(state.path, 0), chi2));
      } else {
        const double R = state.R[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)];
        v.h1 = std::max(v.h1, weighted_norm(lam, obs.A, info_at(state.path, k - 1)) - R);
        v.h2 = std::max(v.h2, h2(R, xp, lam, obs, chi2));
      }
    }
  }
  const Mat PK = inverse_spd(info_at(state.path, K));
  const Vec& xK = state.path.steps.back().x;
  for (int n = 0; n < env.target.faces(); ++n) {
    const Vec a = env.target.A.row(n).transpose();
    v.target = std::max(v.target, std::sqrt(chi2 * a.dot(PK * a)) - (env.target.b(n) - a.dot(xK)));
  }
  return v;
}

double check_kf_tightness(const BeliefPath& path, const ProcessModel& model) {
  double worst = 0.0;
  for (int k = 1; k <= path.K(); ++k) {
    const Mat r = inverse_spd(path.steps[static_cast<std::size_t>(k)].Q) - inverse_spd(info_at(path, k - 1)) - model.W;
    worst = std::max(worst, r.norm());
  }
  return worst;
}

double check_kf_tightness(const CcpState& state, const ProcessModel& model) {
  return check_kf_tightness(state.path, model);
}

// ---------------------------------------------------------------------------
// subproblem

Vec Subproblem::point_of(const CcpState& state) const {
  Vec v = Vec::Zero(problem.num_variables());
  const int K = static_cast<int>(x.size());
  for (int k = 1; k <= K; ++k) {
    const auto& st = state.path.steps[static_cast<std::size_t>(k)];
    const auto i = static_cast<std::size_t>(k - 1);
    v.segment(x[i].offset, x[i].n) = st.x;
    v.segment(Q[i].offset, svec_size(Q[i].n)) = svec(st.Q);
    v.segment(S[i].offset, svec_size(S[i].n)) = svec(st.S);
    v(epi[i]) = (st.x - state.path.steps[i].x).squaredNorm();
    for (std::size_t j = 0; j < lambda[i].size(); ++j) {
      v.segment(lambda[i][j].offset, lambda[i][j].n) = state.lambda[i][j];
      if (R[i][j] >= 0) v(R[i][j]) = state.R[i][j];
      v(R_hat[i][j]) = state.R_hat[i][j];
    }
  }
  for (std::size_t n = 0; n < C.size(); ++n) v(C[n]) = state.C(static_cast<Eigen::Index>(n));
  return v;
}

double Subproblem::objective(const Vec& v) const { return problem.objective_value(v) + objective_constant; }

namespace {

// The iterate itself sits on the boundary of the subproblem (tight Kalman
// LMIs, minimal slacks, certificates at their margin). Nudge it inside: add a
// sliver of information to every step, shrink each Q slightly below the
// Kalman value, and split every certificate margin between its two
// inequalities. Falls back to the raw iterate if some margin stays <= 0.
Vec interior_start(const Subproblem& sp, const CcpState& state, const Environment& env, const ProcessModel& model,
                   const SmootherConfig& config) {
  const int K = state.K();
  const int J = env.num_unified();
  const double chi2 = config.safety.chi2;
  // Widest margin first: a start hugging the cone boundaries leaves the
  // barrier Hessian too ill-conditioned for Newton to make progress.
  for (double rho = 1e-1; rho >= 1e-8; rho /= 10.0) {
    const double eps = std::max(0.1 * rho, 1e-8);
    CcpState s = state;
    for (int k = 1; k <= K; ++k) {
      auto& st = s.path.steps[static_cast<std::size_t>(k)];
      st.Q = (1.0 - eps) * inverse_spd(inverse_spd(info_at(s.path, k - 1)) + model.W);
      st.S = st.S + rho * (st.Q + st.S);
    }
    bool ok = true;
    for (int k = 1; k <= K && ok; ++k)
      for (int j = 0; j < J && ok; ++j) {
        const Polytope& obs = env.unified[static_cast<std::size_t>(j)];
        Vec& lam = s.lambda[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)];
        const Vec lam0 = lam;
        lam = lam.cwiseMax(1e-2 * rho * std::max(1.0, lam.maxCoeff()));
        // the linearized h2 charges ||lam - lam0||^2 on top of the true value
        const double gap = (lam - lam0).squaredNorm();
        const Vec& xp = s.path.steps[static_cast<std::size_t>(k - 1)].x;
        const Vec& xk = s.path.steps[static_cast<std::size_t>(k)].x;
        const Mat Mp = info_at(s.path, k - 1);
        const Mat& Qk = s.path.steps[static_cast<std::size_t>(k)].Q;
        const double m1 = schur_margin(lam, obs, xp, Mp, chi2);
        const double m2 = schur_margin(lam, obs, xk, Qk, chi2);
        if (!(m1 > gap && m2 > gap)) {
          ok = false;
          break;
        }
        if (k >= 2)
          s.R[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)] = weighted_norm(lam, obs.A, Mp) + 0.5 * (m1 - gap);
        s.R_hat[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)] = weighted_norm(lam, obs.A, Qk) + 0.5 * (m2 - gap);
      }
    if (!ok) continue;
    // target slacks: strictly between the two bounds
    const Mat PK = inverse_spd(info_at(s.path, K));
    const Vec& xK = s.path.steps.back().x;
    const double gamma = 1.0 / std::sqrt(chi2);
    for (int n = 0; n < env.target.faces() && ok; ++n) {
      const Vec a = env.target.A.row(n).transpose();
      const double upper = 1.0 / std::sqrt(a.dot(PK * a));
      const double slack = env.target.b(n) - a.dot(xK);
      if (!(slack > 0.0) || !(1.0 / (gamma * slack) < upper)) ok = false;
      else s.C(n) = std::sqrt(upper / (gamma * slack));
    }
    if (!ok) continue;
    Vec v = sp.point_of(s);
    for (std::size_t i = 0; i < sp.epi.size(); ++i) v(sp.epi[i]) += rho * std::max(1e-6, v(sp.epi[i]));
    return v;
  }
  return sp.point_of(state);
}

}  // namespace

Subproblem build_subproblem(const CcpState& state, const Environment& env, const ProcessModel& model,
                            const SmootherConfig& config) {
  const int K = state.K();
  const int J = env.num_unified();
  const int d = env.dim();
  if (K < 1) throw ShapeMismatch("subproblem: path has no transitions");
  if (static_cast<int>(state.lambda.size()) != K || static_cast<int>(state.R.size()) != K ||
      static_cast<int>(state.R_hat.size()) != K || state.C.size() != env.target.faces())
    throw ShapeMismatch("subproblem: state does not match the path length or target");
  for (int k = 0; k < K; ++k) {
    if (static_cast<int>(state.lambda[static_cast<std::size_t>(k)].size()) != J)
      throw ShapeMismatch("subproblem: multiplier count differs from the obstacle count");
    for (int j = 0; j < J; ++j)
      if (state.lambda[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)].size() !=
          env.unified[static_cast<std::size_t>(j)].faces())
        throw ShapeMismatch("subproblem: multiplier length differs from the face count");
  }
  if (state.path.steps.front().x.size() != d || model.W.rows() != d)
    throw ShapeMismatch("subproblem: dimension mismatch");

  const double chi2 = config.safety.chi2;
  const double gamma = 1.0 / std::sqrt(chi2);
  Subproblem sp;
  auto& p = sp.problem;
  Census& cen = sp.census;

  for (int k = 1; k <= K; ++k) {
    const std::string tag = std::to_string(k);
    sp.x.push_back(p.add_vector("x" + tag, d));
    sp.Q.push_back(p.add_symmetric("Q" + tag, d));
    sp.S.push_back(p.add_symmetric("S" + tag, d));
    sp.epi.push_back(p.add_scalar("t" + tag));
    cen.vars_x += d;
    cen.vars_Q += svec_size(d);
    cen.vars_S += svec_size(d);
    ++cen.vars_epi;
    sp.lambda.emplace_back();
    sp.R.emplace_back();
    sp.R_hat.emplace_back();
    for (int j = 0; j < J; ++j) {
      const int f = env.unified[static_cast<std::size_t>(j)].faces();
      const std::string tj = tag + "_" + std::to_string(j);
      sp.lambda.back().push_back(p.add_vector("lambda" + tj, f));
      cen.vars_lambda += f;
      sp.R.back().push_back(k >= 2 ? p.add_scalar("R" + tj) : -1);
      if (k >= 2) ++cen.vars_R;
      sp.R_hat.back().push_back(p.add_scalar("Rhat" + tj));
      ++cen.vars_R_hat;
    }
  }
  for (int n = 0; n < env.target.faces(); ++n) {
    sp.C.push_back(p.add_scalar("C" + std::to_string(n)));
    ++cen.vars_C;
  }

  auto xs = [&](int k) {
    return k == 0 ? exprs_of(state.path.steps.front().x) : sp.x[static_cast<std::size_t>(k - 1)].exprs();
  };
  auto info = [&](int k) {
    if (k == 0) return AffineMatrix::constant(info_at(state.path, 0));
    return AffineMatrix::from(sp.Q[static_cast<std::size_t>(k - 1)]) + AffineMatrix::from(sp.S[static_cast<std::size_t>(k - 1)]);
  };

  // objective
  for (int k = 1; k <= K; ++k) {
    const auto i = static_cast<std::size_t>(k - 1);
    p.add_objective(LinExpr::var(sp.epi[i]));
    const auto xk = xs(k), xp = xs(k - 1);
    std::vector<LinExpr> dx;
    for (int r = 0; r < d; ++r) dx.push_back(xk[static_cast<std::size_t>(r)] - xp[static_cast<std::size_t>(r)]);
    p.add_quadratic_le(dx, LinExpr::var(sp.epi[i]), "epi" + std::to_string(k));
    ++cen.epi_quad;
    if (config.alpha > 0.0) {
      const auto& st = state.path.steps[static_cast<std::size_t>(k)];
      const H3Linearization lin = linearize_h3(st.Q, st.S);
      const double w = 0.5 * config.alpha;
      LinExpr tr;
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) {
          tr += lin.grad(r, c) * sp.Q[i](r, c);
          tr += lin.grad(r, c) * sp.S[i](r, c);
        }
      p.add_objective(w * tr);
      p.add_neg_logdet(AffineMatrix::from(sp.Q[i]), w);
      ++cen.logdet_terms;
      sp.objective_constant += w * (lin.logdet_ref - (lin.grad * lin.ref).trace());
    }
  }

  // Kalman LMIs
  const Mat& W = model.W;
  for (int k = 1; k <= K; ++k) {
    const auto& Qv = sp.Q[static_cast<std::size_t>(k - 1)];
    AffineMatrix m(3 * d);
    m.set_block(0, 0, AffineMatrix::from(Qv));
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) {
        m.set(r, d + c, Qv(r, c));
        LinExpr qw;
        for (int l = 0; l < d; ++l) qw += W(l, c) * Qv(r, l);
        m.set(r, 2 * d + c, qw);
      }
    m.set_block(d, d, info(k - 1));
    m.set_block(2 * d, 2 * d, W);
    p.add_psd(m, "kf" + std::to_string(k));
    ++cen.kf_lmi;
    p.add_psd(AffineMatrix::from(Qv) + AffineMatrix::constant(-config.q_floor * Mat::Identity(d, d)));
    p.add_psd(AffineMatrix::from(sp.S[static_cast<std::size_t>(k - 1)]));
    cen.psd_domain += 2;
  }

  // target
  {
    const auto xK = xs(K);
    const AffineMatrix MK = info(K);
    for (int n = 0; n < env.target.faces(); ++n) {
      const Vec a = env.target.A.row(n).transpose();
      const LinExpr Cn = LinExpr::var(sp.C[static_cast<std::size_t>(n)]);
      AffineMatrix m1(2);
      m1.set(0, 0, env.target.b(n) - conic::dot(a, xK));
      m1.set(0, 1, LinExpr(1.0));
      m1.set(1, 1, gamma * Cn);
      p.add_psd(m1, "target_slack" + std::to_string(n));
      AffineMatrix m2(1 + d);
      m2.set(0, 0, LinExpr(1.0));
      for (int c = 0; c < d; ++c) m2.set(0, 1 + c, a(c) * Cn);
      m2.set_block(1, 1, MK);
      p.add_psd(m2, "target_spread" + std::to_string(n));
      p.add_nonneg(Cn);
      cen.target_lmi += 2;
      ++cen.nonneg;
    }
  }

  // collision certificates
  for (int k = 1; k <= K; ++k) {
    const auto i = static_cast<std::size_t>(k - 1);
    const auto xk = xs(k), xp = xs(k - 1);
    const AffineMatrix Mprev = info(k - 1);
    const AffineMatrix Qk = AffineMatrix::from(sp.Q[i]);
    for (int j = 0; j < J; ++j) {
      const Polytope& obs = env.unified[static_cast<std::size_t>(j)];
      const auto& lam = sp.lambda[i][static_cast<std::size_t>(j)];
      const std::string tag = std::to_string(k) + "_" + std::to_string(j);
      for (int r = 0; r < lam.n; ++r) p.add_nonneg(lam(r));
      cen.nonneg += lam.n;
      const Vec& lt = state.lambda[i][static_cast<std::size_t>(j)];

      auto add_h2 = [&](const LinExpr& Rv, const std::vector<LinExpr>& x, const Vec& xt) {
        const H2Linearization lin = linearize_h2(xt, lt, obs, chi2);
        std::vector<LinExpr> u = affine_rows(obs, x);
        for (int r = 0; r < lam.n; ++r) u.push_back(lam(r));
        // ||Ax - b||^2 + ||lambda||^2 <= -R - chi2 + ||g||^2 + 2 g^T (A (x - xt) + lambda - lt)
        LinExpr rhs = -Rv - chi2 + lin.g.squaredNorm();
        const Vec Atg = obs.A.transpose() * lin.g;
        rhs += 2.0 * (conic::dot(Atg, x) - Atg.dot(xt));
        rhs += 2.0 * (conic::dot(lin.g, lam.exprs()) - lin.g.dot(lt));
        p.add_quadratic_le(u, rhs, "h2_" + tag);
        ++cen.h2_quad;
      };

      if (k == 1) {
        const Vec c = obs.A * state.path.steps.front().x - obs.b;
        p.add_psd(h1_matrix(conic::dot(2.0 * c, lam.exprs()) - chi2, lam, obs, Mprev), "init_" + tag);
        ++cen.initial_lmi;
      } else {
        const LinExpr Rv = LinExpr::var(sp.R[i][static_cast<std::size_t>(j)]);
        p.add_psd(h1_matrix(Rv, lam, obs, Mprev), "h1_" + tag);
        p.add_nonneg(Rv);
        ++cen.h1_lmi;
        ++cen.nonneg;
        add_h2(Rv, xp, state.path.steps[i].x);
      }
      const LinExpr Rh = LinExpr::var(sp.R_hat[i][static_cast<std::size_t>(j)]);
      p.add_psd(h1_matrix(Rh, lam, obs, Qk), "h1hat_" + tag);
      p.add_nonneg(Rh);
      ++cen.h1_lmi;
      ++cen.nonneg;
      add_h2(Rh, xk, state.path.steps[static_cast<std::size_t>(k)].x);
    }
  }

  p.set_initial_point(interior_start(sp, state, env, model, config));
  return sp;
}

// ---------------------------------------------------------------------------
// iteration

StepOutcome ccp_step(const CcpState& state, const Environment& env, const ProcessModel& model,
                     const SmootherConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  const Subproblem sp = build_subproblem(state, env, model, config);
  const conic::ConicSolution sol = conic::solve(sp.problem, config.solver);
  StepOutcome out;
  out.status = sol.status;
  out.newton_steps = sol.newton_steps;
  out.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (sol.status == conic::Status::infeasible) throw SubproblemInfeasible("CCP subproblem reported infeasible: " + sol.message);
  const bool usable = sol.status == conic::Status::optimal ||
                      (sol.status == conic::Status::stalled && sol.max_violation <= config.solver.feas_tol &&
                       sp.objective(sol.x) <= sp.objective(sp.point_of(state)));
  if (!usable) {
    out.state = state;
    out.stalled = true;
    return out;
  }
  out.stalled = sol.status != conic::Status::optimal;

  const int K = state.K();
  const double th = config.damping;
  CcpState next = state;
  for (int k = 1; k <= K; ++k) {
    const auto i = static_cast<std::size_t>(k - 1);
    auto& st = next.path.steps[static_cast<std::size_t>(k)];
    st.x = th * sol.value(sp.x[i]) + (1 - th) * st.x;
    st.Q = symmetrize(th * sol.value(sp.Q[i]) + (1 - th) * st.Q);
    st.S = symmetrize(th * sol.value(sp.S[i]) + (1 - th) * st.S);
    // S sits on the boundary of the PSD cone only up to the solver gap
    Eigen::SelfAdjointEigenSolver<Mat> es(st.S);
    st.S = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
    for (std::size_t j = 0; j < sp.lambda[i].size(); ++j)
      next.lambda[i][j] = (th * sol.value(sp.lambda[i][j]) + (1 - th) * state.lambda[i][j]).cwiseMax(0.0);
  }
  out.kf_residual_raw = check_kf_tightness(next.path, model);

  // Re-propagate the prior information exactly; this only enlarges Q_k, which
  // keeps every certificate valid and cannot raise the cost.
  for (int k = 1; k <= K; ++k) {
    auto& st = next.path.steps[static_cast<std::size_t>(k)];
    st.Q = inverse_spd(inverse_spd(info_at(next.path, k - 1)) + model.W);
  }
  fill_slacks(next, env, config.safety.chi2);
  next.iter = state.iter + 1;
  next.cost_history.push_back(path_cost(next.path));
  out.state = std::move(next);
  return out;
}

SmoothResult smooth(const BeliefPath& path, const Environment& env, const ProcessModel& model,
                    const SmootherConfig& config, const std::function<void(const CcpState&)>& on_iterate) {
  if (config.max_iters < 1) throw DomainError("smoother: max_iters must be at least 1");
  if (!(config.damping > 0.0 && config.damping <= 1.0)) throw DomainError("smoother: damping outside (0, 1]");
  validate_path(path);
  const double chi2 = config.safety.chi2;
  const PathVerdict seed = certify_path(path, env, model, chi2);
  if (!seed.transitions_safe) throw InitInfeasible(seed.first_unsafe_k, seed.first_unsafe_j);
  if (!seed.final_admissible) throw DomainError("smoother: seed path does not end in an admissible state");

  BeliefPath seeded = path;
  seeded.alpha = config.alpha;
  SmoothResult res;
  const auto t0 = std::chrono::steady_clock::now();
  CcpState state = initial_state(seeded, env, config);
  auto row = [&](const CcpState& s, double ms) {
    const CostBreakdown c = path_cost_parts(s.path);
    return TraceRow{s.iter, c.total(), c.control, c.info, full_problem_violation(s, env, model, chi2).max(), ms};
  };
  res.trace.push_back(row(state, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()));
  if (on_iterate) on_iterate(state);

  for (int it = 1; it <= config.max_iters; ++it) {
    StepOutcome out = ccp_step(state, env, model, config);
    if (out.status != conic::Status::optimal) res.all_optimal = false;
    if (out.stalled && out.state.iter == state.iter) {
      res.stalled = true;
      break;
    }
    res.kf_residual_raw.push_back(out.kf_residual_raw);
    res.trace.push_back(row(out.state, out.solve_ms));
    if (config.recertify) res.verdicts.push_back(certify_path(out.state.path, env, model, chi2));
    if (on_iterate) on_iterate(out.state);
    const double decrease = state.cost_history.back() - out.state.cost_history.back();
    state = std::move(out.state);
    if (decrease < config.tol) {
      res.converged = true;
      break;
    }
  }
  res.final_verdict = certify_path(state.path, env, model, chi2);
  res.cost_history = state.cost_history;
  res.path = state.path;
  res.state = std::move(state);
  return res;
}

}  // namespace minsense
