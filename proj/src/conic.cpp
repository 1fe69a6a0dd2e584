#include "minsense/conic.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <Eigen/Sparse>

#include "minsense/errors.hpp"

namespace minsense::conic {

// ---------------------------------------------------------------------------
// Expressions

LinExpr& LinExpr::operator+=(const LinExpr& o) {
  terms.insert(terms.end(), o.terms.begin(), o.terms.end());
  constant += o.constant;
  return *this;
}

LinExpr& LinExpr::operator-=(const LinExpr& o) {
  for (const auto& [i, c] : o.terms) terms.emplace_back(i, -c);
  constant -= o.constant;
  return *this;
}

LinExpr& LinExpr::operator*=(double s) {
  for (auto& t : terms) t.second *= s;
  constant *= s;
  return *this;
}

void LinExpr::compress() {
  std::sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<int, double>> out;
  for (const auto& t : terms) {
    if (!out.empty() && out.back().first == t.first)
      out.back().second += t.second;
    else
      out.push_back(t);
  }
  out.erase(std::remove_if(out.begin(), out.end(), [](const auto& t) { return t.second == 0.0; }), out.end());
  terms = std::move(out);
}

double LinExpr::eval(const Vec& x) const {
  double v = constant;
  for (const auto& [i, c] : terms) v += c * x(i);
  return v;
}

LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
LinExpr operator-(LinExpr a, const LinExpr& b) { return a -= b; }
LinExpr operator-(LinExpr a) { return a *= -1.0; }
LinExpr operator*(double s, LinExpr a) { return a *= s; }
LinExpr operator*(LinExpr a, double s) { return a *= s; }

LinExpr dot(const Vec& c, const std::vector<LinExpr>& v) {
  if (c.size() != static_cast<Eigen::Index>(v.size())) throw ShapeMismatch("dot: length mismatch");
  LinExpr out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (c(static_cast<Eigen::Index>(i)) != 0.0) out += c(static_cast<Eigen::Index>(i)) * v[i];
  return out;
}

std::vector<LinExpr> VecVar::exprs() const {
  std::vector<LinExpr> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back((*this)(i));
  return out;
}

LinExpr SymVar::operator()(int i, int j) const {
  if (i > j) std::swap(i, j);
  const int idx = offset + j * (j + 1) / 2 + i;
  return LinExpr::var(idx, i == j ? 1.0 : 1.0 / std::sqrt(2.0));
}

int AffineMatrix::index(int i, int j) const {
  if (i < 0 || j < 0 || i >= n_ || j >= n_) throw ShapeMismatch("affine matrix index out of range");
  if (i > j) std::swap(i, j);
  return j * (j + 1) / 2 + i;
}

AffineMatrix AffineMatrix::constant(const Mat& m) {
  if (m.rows() != m.cols()) throw ShapeMismatch("affine matrix: constant is not square");
  if (!is_symmetric(m, 1e-12 * (1.0 + m.cwiseAbs().maxCoeff())))
    throw ShapeMismatch("affine matrix: constant is not symmetric");
  AffineMatrix a(static_cast<int>(m.rows()));
  for (int j = 0; j < a.n_; ++j)
    for (int i = 0; i <= j; ++i) a.set(i, j, LinExpr(m(i, j)));
  return a;
}

AffineMatrix AffineMatrix::from(const SymVar& v) {
  AffineMatrix a(v.n);
  for (int j = 0; j < v.n; ++j)
    for (int i = 0; i <= j; ++i) a.set(i, j, v(i, j));
  return a;
}

void AffineMatrix::set_block(int r, int c, const AffineMatrix& block) {
  const int b = block.size();
  if (r + b > n_ || c + b > n_) throw ShapeMismatch("set_block: block exceeds matrix");
  if (r != c) throw ShapeMismatch("set_block: affine blocks must sit on the diagonal");
  for (int j = 0; j < b; ++j)
    for (int i = 0; i <= j; ++i) set(r + i, c + j, block.at(i, j));
}

void AffineMatrix::set_block(int r, int c, const Mat& block) {
  if (r + block.rows() > n_ || c + block.cols() > n_) throw ShapeMismatch("set_block: block exceeds matrix");
  if (r == c && (block.rows() != block.cols() || !is_symmetric(block, 1e-12 * (1.0 + block.cwiseAbs().maxCoeff()))))
    throw ShapeMismatch("set_block: diagonal block must be symmetric");
  if (r != c && r + block.rows() > c && c + block.cols() > r)
    throw ShapeMismatch("set_block: off-diagonal block overlaps the diagonal");
  for (int i = 0; i < block.rows(); ++i)
    for (int j = 0; j < block.cols(); ++j)
      if (r == c ? i <= j : true) set(r + i, c + j, LinExpr(block(i, j)));
}

void AffineMatrix::set_column(int r, int c, const std::vector<LinExpr>& col) {
  for (std::size_t i = 0; i < col.size(); ++i) set(r + static_cast<int>(i), c, col[i]);
}

AffineMatrix& AffineMatrix::operator+=(const AffineMatrix& o) {
  if (o.n_ != n_) throw ShapeMismatch("affine matrix sum: size mismatch");
  for (std::size_t k = 0; k < upper_.size(); ++k) upper_[k] += o.upper_[k];
  return *this;
}

AffineMatrix operator+(AffineMatrix a, const AffineMatrix& b) { return a += b; }

AffineMatrix operator*(double s, AffineMatrix a) {
  for (int j = 0; j < a.size(); ++j)
    for (int i = 0; i <= j; ++i) a.set(i, j, s * a.at(i, j));
  return a;
}

Mat AffineMatrix::eval(const Vec& x) const {
  Mat m(n_, n_);
  for (int j = 0; j < n_; ++j)
    for (int i = 0; i <= j; ++i) {
      m(i, j) = at(i, j).eval(x);
      m(j, i) = m(i, j);
    }
  return m;
}

// ---------------------------------------------------------------------------
// Problem

int ConicProblem::add_scalar(const std::string& name) {
  names_.push_back(name);
  return num_vars_++;
}

VecVar ConicProblem::add_vector(const std::string& name, int n) {
  VecVar v{num_vars_, n};
  for (int i = 0; i < n; ++i) names_.push_back(name + "[" + std::to_string(i) + "]");
  num_vars_ += n;
  return v;
}

SymVar ConicProblem::add_symmetric(const std::string& name, int n) {
  SymVar v{num_vars_, n};
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) names_.push_back(name + "[" + std::to_string(i) + "," + std::to_string(j) + "]");
  num_vars_ += svec_size(n);
  return v;
}

void ConicProblem::check_index(const LinExpr& e) const {
  for (const auto& [i, c] : e.terms)
    if (i < 0 || i >= num_vars_) throw ShapeMismatch("expression references an unregistered variable");
}

void ConicProblem::add_objective(const LinExpr& e) {
  check_index(e);
  objective_ += e;
  objective_.compress();
}

void ConicProblem::add_neg_logdet(const AffineMatrix& m, double weight) {
  if (m.size() < 1) throw ShapeMismatch("logdet term: empty matrix");
  if (!(weight > 0.0)) throw DomainError("logdet term: weight must be positive");
  for (int j = 0; j < m.size(); ++j)
    for (int i = 0; i <= j; ++i) check_index(m.at(i, j));
  logdet_.push_back({m, weight});
}

int ConicProblem::add_equality(LinExpr e, std::string label) {
  check_index(e);
  e.compress();
  constraints_.push_back({ConeKind::zero, {std::move(e)}, AffineMatrix(), std::move(label)});
  return static_cast<int>(constraints_.size()) - 1;
}

int ConicProblem::add_nonneg(LinExpr e, std::string label) {
  check_index(e);
  e.compress();
  constraints_.push_back({ConeKind::nonneg, {std::move(e)}, AffineMatrix(), std::move(label)});
  return static_cast<int>(constraints_.size()) - 1;
}

int ConicProblem::add_soc(LinExpr t, std::vector<LinExpr> u, std::string label) {
  std::vector<LinExpr> ex;
  ex.reserve(u.size() + 1);
  ex.push_back(std::move(t));
  for (auto& e : u) ex.push_back(std::move(e));
  for (auto& e : ex) {
    check_index(e);
    e.compress();
  }
  constraints_.push_back({ConeKind::soc, std::move(ex), AffineMatrix(), std::move(label)});
  return static_cast<int>(constraints_.size()) - 1;
}

int ConicProblem::add_quadratic_le(const std::vector<LinExpr>& u, const LinExpr& v, std::string label) {
  // Kept native rather than lifted to ||(2u, v - 1)|| <= v + 1: the lifted
  // barrier Hessian cancels terms of order 1/s^2 and turns indefinite near the boundary.
  std::vector<LinExpr> ex;
  ex.reserve(u.size() + 1);
  ex.push_back(v);
  for (const auto& e : u) ex.push_back(e);
  for (auto& e : ex) {
    check_index(e);
    e.compress();
  }
  constraints_.push_back({ConeKind::quad, std::move(ex), AffineMatrix(), std::move(label)});
  return static_cast<int>(constraints_.size()) - 1;
}

int ConicProblem::add_psd(const AffineMatrix& m, std::string label) {
  if (m.size() < 1) throw ShapeMismatch("psd constraint: empty matrix");
  AffineMatrix c = m;
  for (int j = 0; j < c.size(); ++j)
    for (int i = 0; i <= j; ++i) {
      check_index(c.at(i, j));
      LinExpr e = c.at(i, j);
      e.compress();
      c.set(i, j, std::move(e));
    }
  constraints_.push_back({ConeKind::psd, {}, std::move(c), std::move(label)});
  return static_cast<int>(constraints_.size()) - 1;
}

double ConicProblem::objective_value(const Vec& x) const {
  double v = objective_.eval(x);
  for (const auto& t : logdet_) {
    const Mat g = t.matrix.eval(x);
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    v -= t.weight * 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }
  return v;
}

double ConicProblem::violation(int id, const Vec& x) const {
  const auto& c = constraints_.at(static_cast<std::size_t>(id));
  switch (c.kind) {
    case ConeKind::zero:
      return std::abs(c.exprs[0].eval(x));
    case ConeKind::nonneg:
      return std::max(0.0, -c.exprs[0].eval(x));
    case ConeKind::soc: {
      double u2 = 0.0;
      for (std::size_t i = 1; i < c.exprs.size(); ++i) u2 += std::pow(c.exprs[i].eval(x), 2);
      return std::max(0.0, std::sqrt(u2) - c.exprs[0].eval(x));
    }
    case ConeKind::quad: {
      double u2 = 0.0;
      for (std::size_t i = 1; i < c.exprs.size(); ++i) u2 += std::pow(c.exprs[i].eval(x), 2);
      return std::max(0.0, u2 - c.exprs[0].eval(x));
    }
    case ConeKind::psd:
      return std::max(0.0, -min_eigenvalue(c.matrix.eval(x)));
  }
  return 0.0;
}

double ConicProblem::max_violation(const Vec& x) const {
  double v = 0.0;
  for (int i = 0; i < static_cast<int>(constraints_.size()); ++i) v = std::max(v, violation(i, x));
  return v;
}

const char* to_string(Status s) {
  switch (s) {
    case Status::optimal:
      return "optimal";
    case Status::infeasible:
      return "infeasible";
    case Status::unbounded:
      return "unbounded";
    case Status::stalled:
      return "stalled";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Barrier machinery

namespace {

enum class BlockKind { nonneg, soc, quad, psd };

// A cone block over a handful of local variables: y = M z_loc + c for the
// vector cones, F = F0 + sum_a z_loc[a] F_a for the PSD cone.
struct Block {
  BlockKind kind;
  std::vector<int> vars;
  Mat M;
  Vec c;
  Mat F0;
  std::vector<Mat> F;
  double weight = 1.0;       // barrier weight; objective logdet terms carry w
  bool objective = false;    // logdet objective term: scaled by t in phase II

  int degree() const {
    switch (kind) {
      case BlockKind::nonneg:
        return 1;
      case BlockKind::soc:
        return 2;
      case BlockKind::quad:
        return 1;
      case BlockKind::psd:
        return static_cast<int>(F0.rows());
    }
    return 0;
  }
};

std::vector<int> collect_vars(const std::vector<const LinExpr*>& exprs) {
  std::vector<int> v;
  for (const auto* e : exprs)
    for (const auto& t : e->terms) v.push_back(t.first);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

int local_index(const std::vector<int>& vars, int global) {
  return static_cast<int>(std::lower_bound(vars.begin(), vars.end(), global) - vars.begin());
}

// sigma_index >= 0 adds the phase-I shift variable to every block; relax adds a
// constant shift to every constraint.
Block make_vector_block(BlockKind kind, const std::vector<LinExpr>& exprs, int sigma_index, double relax) {
  Block b;
  b.kind = kind;
  std::vector<const LinExpr*> ptrs;
  for (const auto& e : exprs) ptrs.push_back(&e);
  b.vars = collect_vars(ptrs);
  if (sigma_index >= 0) b.vars.push_back(sigma_index);
  const int m = static_cast<int>(exprs.size());
  b.M = Mat::Zero(m, static_cast<int>(b.vars.size()));
  b.c = Vec::Zero(m);
  for (int r = 0; r < m; ++r) {
    b.c(r) = exprs[r].constant;
    for (const auto& [i, coef] : exprs[r].terms) b.M(r, local_index(b.vars, i)) += coef;
  }
  b.c(0) += relax;
  if (sigma_index >= 0) b.M(0, static_cast<int>(b.vars.size()) - 1) += 1.0;
  return b;
}

Block make_psd_block(const AffineMatrix& am, int sigma_index, double relax) {
  Block b;
  b.kind = BlockKind::psd;
  const int n = am.size();
  std::vector<const LinExpr*> ptrs;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) ptrs.push_back(&am.at(i, j));
  b.vars = collect_vars(ptrs);
  if (sigma_index >= 0) b.vars.push_back(sigma_index);
  b.F0 = Mat::Zero(n, n);
  b.F.assign(b.vars.size(), Mat::Zero(n, n));
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) {
      const LinExpr& e = am.at(i, j);
      b.F0(i, j) = e.constant;
      b.F0(j, i) = e.constant;
      for (const auto& [g, coef] : e.terms) {
        Mat& Fa = b.F[local_index(b.vars, g)];
        Fa(i, j) += coef;
        if (i != j) Fa(j, i) += coef;
      }
    }
  b.F0.diagonal().array() += relax;
  if (sigma_index >= 0) b.F.back() = Mat::Identity(n, n);
  return b;
}

struct Evaluator {
  std::vector<Block> blocks;
  Vec c;            // linear objective, length nz
  int nz = 0;
  int degree = 0;   // barrier degree of the constraint blocks
  double bound = 0.0;

  // R * sum of the bound multipliers at a central point: how much the optimum
  // would still move if the artificial box grew.
  double bound_pressure(const Vec& z, double t) const {
    if (bound <= 0.0) return 0.0;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < z.size() && i < static_cast<Eigen::Index>(nvars); ++i)
      acc += bound / (t * (bound - z(i))) + bound / (t * (bound + z(i)));
    return acc;
  }
  int nvars = 0;

  // Phi(z) = t * (c^T z + sum_obj w * (-logdet)) + sum_constraints barrier.
  // Returns false when z is outside the domain.
  bool value(const Vec& z, double t, double& out) const {
    double v = t * c.dot(z);
    for (const auto& b : blocks) {
      const double scale = b.objective ? t * b.weight : b.weight;
      Vec zl(b.vars.size());
      for (std::size_t a = 0; a < b.vars.size(); ++a) zl(static_cast<Eigen::Index>(a)) = z(b.vars[a]);
      switch (b.kind) {
        case BlockKind::nonneg: {
          const double y = b.M.row(0).dot(zl) + b.c(0);
          if (!(y > 0.0)) return false;
          v -= scale * std::log(y);
          break;
        }
        case BlockKind::soc: {
          const Vec y = b.M * zl + b.c;
          const double s = y(0) * y(0) - y.tail(y.size() - 1).squaredNorm();
          if (!(y(0) > 0.0) || !(s > 0.0)) return false;
          v -= scale * std::log(s);
          break;
        }
        case BlockKind::quad: {
          const Vec y = b.M * zl + b.c;
          const double f = y(0) - y.tail(y.size() - 1).squaredNorm();
          if (!(f > 0.0)) return false;
          v -= scale * std::log(f);
          break;
        }
        case BlockKind::psd: {
          Mat F = b.F0;
          for (std::size_t a = 0; a < b.vars.size(); ++a) F += zl(static_cast<Eigen::Index>(a)) * b.F[a];
          Eigen::LLT<Mat> llt(F);
          if (llt.info() != Eigen::Success) return false;
          const auto d = llt.matrixLLT().diagonal();
          if (!(d.minCoeff() > 0.0)) return false;
          v -= scale * 2.0 * d.array().log().sum();
          break;
        }
      }
    }
    if (!std::isfinite(v)) return false;
    out = v;
    return true;
  }

  bool derivatives(const Vec& z, double t, Vec& grad, std::vector<Eigen::Triplet<double>>& hess) const {
    grad = t * c;
    hess.clear();
    for (const auto& b : blocks) {
      const double scale = b.objective ? t * b.weight : b.weight;
      const int p = static_cast<int>(b.vars.size());
      Vec zl(p);
      for (int a = 0; a < p; ++a) zl(a) = z(b.vars[a]);
      Vec g(p);
      Mat H(p, p);
      switch (b.kind) {
        case BlockKind::nonneg: {
          const double y = b.M.row(0).dot(zl) + b.c(0);
          if (!(y > 0.0)) return false;
          g = -b.M.row(0).transpose() / y;
          H = b.M.row(0).transpose() * b.M.row(0) / (y * y);
          break;
        }
        case BlockKind::soc: {
          const Vec y = b.M * zl + b.c;
          Vec Jy = -y;
          Jy(0) = y(0);
          const double s = y.dot(Jy);
          if (!(y(0) > 0.0) || !(s > 0.0)) return false;
          const Vec gy = (-2.0 / s) * Jy;
          Mat Hy = (4.0 / (s * s)) * Jy * Jy.transpose();
          Hy.diagonal().array() += 2.0 / s;
          Hy(0, 0) -= 4.0 / s;
          g = b.M.transpose() * gy;
          H = b.M.transpose() * Hy * b.M;
          break;
        }
        case BlockKind::quad: {
          // -log(v - ||u||^2): Hessian gg^T + (2/f) U^T U, PSD as assembled
          const Vec y = b.M * zl + b.c;
          const int m = static_cast<int>(y.size()) - 1;
          const double f = y(0) - y.tail(m).squaredNorm();
          if (!(f > 0.0)) return false;
          const Mat U = b.M.bottomRows(m);
          g = (2.0 * U.transpose() * y.tail(m) - b.M.row(0).transpose()) / f;
          H = g * g.transpose() + (2.0 / f) * U.transpose() * U;
          break;
        }
        case BlockKind::psd: {
          Mat F = b.F0;
          for (int a = 0; a < p; ++a) F += zl(a) * b.F[a];
          Eigen::LLT<Mat> llt(F);
          if (llt.info() != Eigen::Success) return false;
          const auto L = llt.matrixL();
          std::vector<Mat> G(p);
          for (int a = 0; a < p; ++a) {
            Mat tmp = L.solve(b.F[a]);
            G[a] = L.solve(tmp.transpose()).transpose();
            g(a) = -G[a].trace();
          }
          for (int a = 0; a < p; ++a)
            for (int e = 0; e <= a; ++e) {
              const double h = G[a].cwiseProduct(G[e].transpose()).sum();
              H(a, e) = h;
              H(e, a) = h;
            }
          break;
        }
      }
      for (int a = 0; a < p; ++a) {
        grad(b.vars[a]) += scale * g(a);
        for (int e = 0; e < p; ++e) hess.emplace_back(b.vars[a], b.vars[e], scale * H(a, e));
      }
    }
    return true;
  }
};

struct Equalities {
  Eigen::SparseMatrix<double> E;
  Vec e;
  int rows() const { return static_cast<int>(E.rows()); }
};

Equalities compile_equalities(const ConicProblem& p, int nz) {
  Equalities eq;
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<double> rhs;
  int r = 0;
  for (const auto& c : p.constraints()) {
    if (c.kind != ConeKind::zero) continue;
    for (const auto& [i, coef] : c.exprs[0].terms) trip.emplace_back(r, i, coef);
    rhs.push_back(-c.exprs[0].constant);
    ++r;
  }
  eq.E.resize(r, nz);
  eq.E.setFromTriplets(trip.begin(), trip.end());
  eq.e = Eigen::Map<Vec>(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
  return eq;
}

// bound > 0 adds |x_i| <= bound for every original variable. It keeps the
// barrier problems bounded when the feasible set is not.
Evaluator compile(const ConicProblem& p, bool phase1, double relax, double bound) {
  Evaluator ev;
  const int n = p.num_variables();
  ev.nz = phase1 ? n + 1 : n;
  ev.nvars = n;
  const int sigma = phase1 ? n : -1;
  ev.c = Vec::Zero(ev.nz);
  if (phase1) {
    ev.c(n) = 1.0;
  } else {
    for (const auto& [i, coef] : p.objective().terms) ev.c(i) += coef;
  }
  for (const auto& c : p.constraints()) {
    switch (c.kind) {
      case ConeKind::zero:
        break;
      case ConeKind::nonneg:
        ev.blocks.push_back(make_vector_block(BlockKind::nonneg, c.exprs, sigma, relax));
        break;
      case ConeKind::soc:
        ev.blocks.push_back(make_vector_block(BlockKind::soc, c.exprs, sigma, relax));
        break;
      case ConeKind::quad:
        ev.blocks.push_back(make_vector_block(BlockKind::quad, c.exprs, sigma, relax));
        break;
      case ConeKind::psd:
        ev.blocks.push_back(make_psd_block(c.matrix, sigma, relax));
        break;
    }
  }
  for (const auto& b : ev.blocks) ev.degree += b.degree();
  if (bound > 0.0) {
    for (int i = 0; i < n; ++i) {
      ev.blocks.push_back(make_vector_block(BlockKind::nonneg, {LinExpr(bound) - LinExpr::var(i)}, -1, 0.0));
      ev.blocks.push_back(make_vector_block(BlockKind::nonneg, {LinExpr(bound) + LinExpr::var(i)}, -1, 0.0));
    }
    ev.degree += 2 * n;
    ev.bound = bound;
  }
  for (const auto& t : p.logdet_terms()) {
    Block b = make_psd_block(t.matrix, sigma, 0.0);
    if (!phase1) {
      b.objective = true;
      b.weight = t.weight;
    }
    ev.blocks.push_back(std::move(b));
  }
  if (phase1) {
    // floor on the shift keeps phase I bounded
    LinExpr floor_expr = LinExpr::var(n) + LinExpr(1.0);
    Block b = make_vector_block(BlockKind::nonneg, {floor_expr}, -1, 0.0);
    ev.blocks.push_back(std::move(b));
  }
  return ev;
}

// Largest shift needed to put z strictly inside every block (phase-I start).
double required_shift(const ConicProblem& p, const Vec& x) {
  double s = 0.0;
  for (int i = 0; i < static_cast<int>(p.constraints().size()); ++i) {
    if (p.constraints()[static_cast<std::size_t>(i)].kind == ConeKind::zero) continue;
    s = std::max(s, p.violation(i, x));
  }
  for (const auto& t : p.logdet_terms()) s = std::max(s, -min_eigenvalue(t.matrix.eval(x)));
  return s;
}

enum class CenterResult { ok, stalled, unbounded };

struct PathFollower {
  const Evaluator& ev;
  const Equalities& eq;
  const Settings& st;
  int& newton_steps;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool pattern_ready = false;

  bool newton_direction(const Vec& z, double t, Vec& grad, Vec& dz, double& dec2) {
    std::vector<Eigen::Triplet<double>> trip;
    if (!ev.derivatives(z, t, grad, trip)) return false;
    const int nz = ev.nz;
    Eigen::SparseMatrix<double> H(nz, nz);
    H.setFromTriplets(trip.begin(), trip.end());
    const Eigen::SparseMatrix<double> H_exact = H;
    Vec diag = H.diagonal();
    for (int i = 0; i < nz; ++i) H.coeffRef(i, i) += 1e-13 * std::abs(diag(i)) + 1e-14;
    H.makeCompressed();
    if (eq.rows() == 0) {
      if (!pattern_ready) {
        ldlt.analyzePattern(H);
        pattern_ready = true;
      }
      ldlt.factorize(H);
      if (ldlt.info() != Eigen::Success) {
        ldlt.analyzePattern(H);
        ldlt.factorize(H);
        if (ldlt.info() != Eigen::Success) return false;
      }
      dz = ldlt.solve(-grad);
    } else {
      const int m = eq.rows();
      std::vector<Eigen::Triplet<double>> kt;
      for (int k = 0; k < H.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(H, k); it; ++it)
          kt.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      for (int k = 0; k < eq.E.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(eq.E, k); it; ++it) {
          kt.emplace_back(nz + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
          kt.emplace_back(static_cast<int>(it.col()), nz + static_cast<int>(it.row()), it.value());
        }
      Eigen::SparseMatrix<double> K(nz + m, nz + m);
      K.setFromTriplets(kt.begin(), kt.end());
      K.makeCompressed();
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
      lu.compute(K);
      if (lu.info() != Eigen::Success) {
        // dependent equality rows
        for (int r = 0; r < m; ++r) kt.emplace_back(nz + r, nz + r, -1e-12);
        K.setFromTriplets(kt.begin(), kt.end());
        K.makeCompressed();
        lu.compute(K);
        if (lu.info() != Eigen::Success) return false;
      }
      Vec rhs(nz + m);
      rhs.head(nz) = -grad;
      rhs.tail(m) = eq.e - eq.E * z;  // pulls drifted iterates back onto the equalities
      const Vec sol = lu.solve(rhs);
      dz = sol.head(nz);
    }
    // dz^T H dz rather than -grad^T dz: the latter picks up the equality
    // multiplier through the regularized KKT solve.
    dec2 = dz.dot(H_exact * dz);
    return dz.allFinite();
  }

  // Newton's method on Phi_t from a strictly feasible z. `stop` lets phase I
  // bail out as soon as the shift turns negative.
  template <typename Stop>
  CenterResult center(Vec& z, double t, Stop&& stop, double tol, int max_steps = -1) {
    double phi = 0.0;
    if (!ev.value(z, t, phi)) return CenterResult::stalled;
    int flat = 0;  // consecutive accepted steps with a decrease below roundoff
    for (int taken = 0;; ++taken) {
      if (newton_steps >= st.max_newton) return CenterResult::stalled;
      if (max_steps >= 0 && taken >= max_steps) return CenterResult::ok;
      Vec grad, dz;
      double dec2 = 0.0;
      if (!newton_direction(z, t, grad, dz, dec2)) return CenterResult::stalled;
      ++newton_steps;
      static const bool trace = std::getenv("MINSENSE_CONIC_TRACE") != nullptr;
      if (trace) std::fprintf(stderr, "t=%g dec2=%g |z|=%g last=%g\n", t, dec2, z.norm(), z(z.size() - 1));
      // Roundoff near the boundary can make dz^T H dz come out negative once
      // the decrement is small; -grad^T dz is the same quantity in exact arithmetic.
      if (!(dec2 >= 0.0) && std::isfinite(dec2)) dec2 = std::abs(grad.dot(dz));
      if (!(dec2 >= 0.0) || !std::isfinite(dec2)) return CenterResult::stalled;
      // At large t, phi carries roundoff of order eps * |phi|; a decrement below
      // that cannot be resolved and counts as centered.
      if (dec2 / 2.0 <= std::max(tol, 1e-14 * std::abs(phi))) return CenterResult::ok;
      const bool quadratic_region = std::sqrt(dec2) < 0.2;
      double step = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 80; ++ls) {
        const Vec zn = z + step * dz;
        double phin = 0.0;
        if (ev.value(zn, t, phin)) {
          if (quadratic_region || phin <= phi - 0.01 * step * dec2) {
            flat = phi - phin > 1e-13 * std::max(1.0, std::abs(phi)) ? 0 : flat + 1;
            z = zn;
            phi = phin;
            moved = true;
            break;
          }
        }
        step *= 0.5;
      }
      if (!moved) return (dec2 / 2.0 <= 1e3 * tol) ? CenterResult::ok : CenterResult::stalled;
      // Steps that no longer change phi measurably: the direction is lost in
      // roundoff. Within unit decrement the point is still close enough to the
      // central path for the gap bound to hold.
      if (flat >= 3) return dec2 < 1.0 ? CenterResult::ok : CenterResult::stalled;
      if (!z.allFinite() || z.cwiseAbs().maxCoeff() > 1e14) return CenterResult::unbounded;
      if (ev.bound > 0.0 && z.head(ev.nvars).cwiseAbs().maxCoeff() > (1.0 - 1e-3) * ev.bound)
        return CenterResult::unbounded;
      if (stop(z)) return CenterResult::ok;
    }
  }
};

void project_equalities(const Equalities& eq, Vec& x) {
  if (eq.rows() == 0) return;
  const Mat E = Mat(eq.E).leftCols(x.size());
  const Vec r = E * x - eq.e;
  if (r.cwiseAbs().maxCoeff() == 0.0) return;
  x -= E.completeOrthogonalDecomposition().solve(r);
}

}  // namespace

ConicSolution solve(const ConicProblem& problem, const Settings& settings) {
  ConicSolution sol;
  const int n = problem.num_variables();
  Vec x = problem.initial_point().value_or(Vec::Zero(n));
  if (x.size() != n) throw ShapeMismatch("initial point has the wrong length");

  const Equalities eq_x = compile_equalities(problem, n);
  project_equalities(eq_x, x);
  const double bound = 1e6 * std::max(1.0, x.size() ? x.cwiseAbs().maxCoeff() : 0.0);

  // Phase I: minimize the common shift sigma until the point is strictly inside.
  double relax = 0.0;
  const double shift0 = required_shift(problem, x);
  {
    Evaluator probe = compile(problem, false, 0.0, 0.0);
    double dummy = 0.0;
    const bool interior = probe.value(x, 1.0, dummy);
    if (!interior || shift0 > 0.0) {
      const Evaluator ev1 = compile(problem, true, 0.0, bound);
      Equalities eq1 = compile_equalities(problem, n + 1);
      Vec z(n + 1);
      z.head(n) = x;
      z(n) = shift0 + 1.0;
      // Grow the shift until the start is strictly inside (handles degenerate SOC heads).
      double tmp = 0.0;
      for (int i = 0; i < 60 && !ev1.value(z, 1.0, tmp); ++i) z(n) = 2.0 * z(n) + 1.0;
      int steps = 0;
      PathFollower pf{ev1, eq1, settings, steps, {}, false};
      // weight the shift against the barrier from the start; at t = 1 the
      // analytic center of a large problem sits at a large shift
      double t = std::max(1.0, ev1.degree / z(n));
      bool found = false;
      for (;;) {
        // Only the sign of the shift matters here, so centering is loose and
        // capped; exact centering crawls along recession directions of
        // unbounded feasible sets.
        const auto res = pf.center(z, t, [&](const Vec& zz) { return zz(n) < 0.0; }, std::max(settings.newton_tol, 1e-3), 25);
        if (res == CenterResult::stalled && !(z(n) < 0.0)) {
          sol.newton_steps += steps;
          sol.status = Status::stalled;
          sol.x = z.head(n);
          sol.message = "phase I stalled";
          sol.max_violation = problem.max_violation(sol.x);
          return sol;
        }
        if (z(n) < 0.0) {
          found = true;
          break;
        }
        if (ev1.degree / t < 0.1 * settings.feas_tol) break;
        t *= settings.mu;
      }
      sol.newton_steps += steps;
      x = z.head(n);
      if (!found) {
        if (z(n) > 0.5 * settings.feas_tol) {
          sol.status = Status::infeasible;
          sol.x = x;
          sol.max_violation = problem.max_violation(x);
          sol.message = "phase I optimum " + std::to_string(z(n));
          return sol;
        }
        // No strict interior within tolerance: work on a slightly relaxed problem.
        relax = std::max(0.0, z(n)) + 0.1 * settings.feas_tol;
      }
    }
  }

  const Evaluator ev = compile(problem, false, relax, bound);
  double phi0 = 0.0;
  if (!ev.value(x, 1.0, phi0)) {
    sol.status = Status::infeasible;
    sol.x = x;
    sol.max_violation = problem.max_violation(x);
    sol.message = "no point in the objective domain";
    return sol;
  }
  int steps = 0;
  PathFollower pf{ev, eq_x, settings, steps, {}, false};
  // Start where x is closest to centered: smallest Newton decrement over a
  // log grid of t. A warm start near the optimum then skips the early stages.
  double t = 1.0;
  {
    double best = std::numeric_limits<double>::infinity();
    for (double tc = 1.0; tc <= 1e12; tc *= 10.0) {
      Vec g, dz;
      double d2 = 0.0;
      if (!pf.newton_direction(x, tc, g, dz, d2) || !std::isfinite(d2)) continue;
      if (d2 < best) {
        best = d2;
        t = tc;
      }
    }
  }
  const int degree = std::max(1, ev.degree + [&] {
    int d = 0;
    for (const auto& b : ev.blocks)
      if (b.objective) d += b.degree();
    return d;
  }());
  sol.status = Status::stalled;
  for (;;) {
    const auto res = pf.center(x, t, [](const Vec&) { return false; }, settings.newton_tol);
    if (res == CenterResult::unbounded) {
      sol.status = Status::unbounded;
      break;
    }
    if (res == CenterResult::stalled) {
      sol.message = "centering stalled at t=" + std::to_string(t);
      break;
    }
    // Counting the logdet objective degrees too makes the bound conservative.
    if (degree / t <= settings.gap_tol) {
      const double obj = problem.objective_value(x);
      sol.status = ev.bound_pressure(x, t) > 1e-6 * std::max(1.0, std::abs(obj)) ? Status::unbounded : Status::optimal;
      break;
    }
    if (problem.objective_value(x) < -1e14) {
      sol.status = Status::unbounded;
      break;
    }
    t *= settings.mu;
  }
  sol.newton_steps += steps;
  sol.gap = degree / t;
  sol.x = x;
  sol.objective = problem.objective_value(x);
  sol.max_violation = problem.max_violation(x);
  if (sol.status == Status::optimal && sol.max_violation > settings.feas_tol) {
    sol.status = Status::stalled;
    sol.message = "constraint violation above tolerance";
  }
  return sol;
}

// ---------------------------------------------------------------------------
// CBF export

namespace {
std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace

void write_cbf(const ConicProblem& problem, std::ostream& os) {
  if (!problem.logdet_terms().empty()) throw ShapeMismatch("CBF export: log-det objective terms are not expressible");
  const auto& cons = problem.constraints();
  os.precision(17);
  os << "VER\n3\n\nOBJSENSE\nMIN\n\nVAR\n" << problem.num_variables() << " 1\nF " << problem.num_variables()
     << "\n\n";

  struct Row {
    int row;
    const LinExpr* e;
  };
  std::vector<std::pair<std::string, int>> cones;
  std::vector<Row> rows;
  std::vector<const Constraint*> psd;
  std::deque<LinExpr> lifted;  // quadratic rows exported as (v + 1, 2u, v - 1) in Q
  int r = 0;
  for (const auto& c : cons) {
    switch (c.kind) {
      case ConeKind::zero:
        cones.emplace_back("L=", 1);
        rows.push_back({r++, &c.exprs[0]});
        break;
      case ConeKind::nonneg:
        cones.emplace_back("L+", 1);
        rows.push_back({r++, &c.exprs[0]});
        break;
      case ConeKind::soc:
        cones.emplace_back("Q", static_cast<int>(c.exprs.size()));
        for (const auto& e : c.exprs) rows.push_back({r++, &e});
        break;
      case ConeKind::quad:
        cones.emplace_back("Q", static_cast<int>(c.exprs.size()) + 1);
        lifted.push_back(c.exprs[0] + LinExpr(1.0));
        rows.push_back({r++, &lifted.back()});
        for (std::size_t i = 1; i < c.exprs.size(); ++i) {
          lifted.push_back(2.0 * c.exprs[i]);
          rows.push_back({r++, &lifted.back()});
        }
        lifted.push_back(c.exprs[0] - LinExpr(1.0));
        rows.push_back({r++, &lifted.back()});
        break;
      case ConeKind::psd:
        psd.push_back(&c);
        break;
    }
  }
  if (!psd.empty()) {
    os << "PSDCON\n" << psd.size() << "\n";
    for (const auto* c : psd) os << c->matrix.size() << "\n";
    os << "\n";
  }
  if (r > 0) {
    os << "CON\n" << r << " " << cones.size() << "\n";
    for (const auto& [k, m] : cones) os << k << " " << m << "\n";
    os << "\n";
  }
  if (!problem.objective().terms.empty()) {
    os << "OBJACOORD\n" << problem.objective().terms.size() << "\n";
    for (const auto& [i, c] : problem.objective().terms) os << i << " " << c << "\n";
    os << "\n";
  }
  if (problem.objective().constant != 0.0) os << "OBJBCOORD\n" << problem.objective().constant << "\n\n";
  std::size_t nnz = 0;
  std::size_t nb = 0;
  for (const auto& row : rows) {
    nnz += row.e->terms.size();
    if (row.e->constant != 0.0) ++nb;
  }
  if (nnz > 0) {
    os << "ACOORD\n" << nnz << "\n";
    for (const auto& row : rows)
      for (const auto& [i, c] : row.e->terms) os << row.row << " " << i << " " << c << "\n";
    os << "\n";
  }
  if (nb > 0) {
    os << "BCOORD\n" << nb << "\n";
    for (const auto& row : rows)
      if (row.e->constant != 0.0) os << row.row << " " << row.e->constant << "\n";
    os << "\n";
  }
  if (!psd.empty()) {
    std::vector<std::string> hc, dc;
    for (std::size_t k = 0; k < psd.size(); ++k) {
      const auto& m = psd[k]->matrix;
      for (int j = 0; j < m.size(); ++j)
        for (int i = j; i < m.size(); ++i) {
          const LinExpr& e = m.at(i, j);
          for (const auto& [v, c] : e.terms)
            hc.push_back(std::to_string(k) + " " + std::to_string(v) + " " + std::to_string(i) + " " +
                         std::to_string(j) + " " + num(c));
          if (e.constant != 0.0)
            dc.push_back(std::to_string(k) + " " + std::to_string(i) + " " + std::to_string(j) + " " +
                         num(e.constant));
        }
    }
    if (!hc.empty()) {
      os << "HCOORD\n" << hc.size() << "\n";
      for (const auto& s : hc) os << s << "\n";
      os << "\n";
    }
    if (!dc.empty()) {
      os << "DCOORD\n" << dc.size() << "\n";
      for (const auto& s : dc) os << s << "\n";
      os << "\n";
    }
  }
}

}  // namespace minsense::conic
