#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "minsense/linalg.hpp"

namespace minsense::conic {

/// Affine expression sum_i coef_i * x[var_i] + constant over scalar coordinates.
struct LinExpr {
  std::vector<std::pair<int, double>> terms;
  double constant = 0.0;

  LinExpr() = default;
  LinExpr(double c) : constant(c) {}  // NOLINT(google-explicit-constructor)

  static LinExpr var(int index, double coef = 1.0) {
    LinExpr e;
    e.terms.emplace_back(index, coef);
    return e;
  }

  LinExpr& operator+=(const LinExpr& o);
  LinExpr& operator-=(const LinExpr& o);
  LinExpr& operator*=(double s);

  /// Merges duplicate variables and drops zero coefficients.
  void compress();
  double eval(const Vec& x) const;
};

LinExpr operator+(LinExpr a, const LinExpr& b);
LinExpr operator-(LinExpr a, const LinExpr& b);
LinExpr operator-(LinExpr a);
LinExpr operator*(double s, LinExpr a);
LinExpr operator*(LinExpr a, double s);

/// Inner product of a constant vector with a vector of expressions.
LinExpr dot(const Vec& c, const std::vector<LinExpr>& v);

struct VecVar {
  int offset = 0;
  int n = 0;
  LinExpr operator()(int i) const { return LinExpr::var(offset + i); }
  std::vector<LinExpr> exprs() const;
};

/// Symmetric matrix variable stored as its scaled upper triangle (svec order).
struct SymVar {
  int offset = 0;
  int n = 0;
  LinExpr operator()(int i, int j) const;
};

/// Square symmetric matrix whose entries are affine expressions. Only the
/// upper triangle is stored; symmetry holds by construction.
class AffineMatrix {
 public:
  explicit AffineMatrix(int n = 0) : n_(n), upper_(static_cast<std::size_t>(n * (n + 1) / 2)) {}

  static AffineMatrix constant(const Mat& m);
  static AffineMatrix from(const SymVar& v);

  int size() const { return n_; }
  const LinExpr& at(int i, int j) const { return upper_[index(i, j)]; }
  void set(int i, int j, LinExpr e) { upper_[index(i, j)] = std::move(e); }

  /// Places `block` with its top-left corner at (r, c). The block must lie on or
  /// above the diagonal unless r == c (diagonal blocks must be square).
  void set_block(int r, int c, const AffineMatrix& block);
  void set_block(int r, int c, const Mat& block);
  void set_column(int r, int c, const std::vector<LinExpr>& col);

  AffineMatrix& operator+=(const AffineMatrix& o);
  Mat eval(const Vec& x) const;

 private:
  int index(int i, int j) const;
  int n_;
  std::vector<LinExpr> upper_;
};

AffineMatrix operator+(AffineMatrix a, const AffineMatrix& b);
AffineMatrix operator*(double s, AffineMatrix a);

enum class ConeKind { zero, nonneg, soc, quad, psd };

struct Constraint {
  ConeKind kind;
  std::vector<LinExpr> exprs;  // zero/nonneg: one expr; soc: t then u; quad: v then u
  AffineMatrix matrix;         // psd only
  std::string label;
};

struct LogdetTerm {
  AffineMatrix matrix;
  double weight;
};

/// Convex program: minimize c^T x + sum_l w_l (-logdet G_l(x)) subject to the
/// registered cone constraints.
class ConicProblem {
 public:
  int add_scalar(const std::string& name);
  VecVar add_vector(const std::string& name, int n);
  SymVar add_symmetric(const std::string& name, int n);

  int num_variables() const { return num_vars_; }
  const std::vector<std::string>& variable_names() const { return names_; }

  void add_objective(const LinExpr& e);
  /// Adds weight * (-logdet m(x)); weight must be positive so the term is convex.
  void add_neg_logdet(const AffineMatrix& m, double weight);

  int add_equality(LinExpr e, std::string label = {});
  int add_nonneg(LinExpr e, std::string label = {});
  /// ||u|| <= t.
  int add_soc(LinExpr t, std::vector<LinExpr> u, std::string label = {});
  /// ||u||^2 <= v, registered as a second-order cone.
  int add_quadratic_le(const std::vector<LinExpr>& u, const LinExpr& v, std::string label = {});
  /// m(x) positive semidefinite. Throws ShapeMismatch for an empty matrix.
  int add_psd(const AffineMatrix& m, std::string label = {});

  void set_initial_point(Vec x) { initial_ = std::move(x); }

  const LinExpr& objective() const { return objective_; }
  const std::vector<LogdetTerm>& logdet_terms() const { return logdet_; }
  const std::vector<Constraint>& constraints() const { return constraints_; }
  const std::optional<Vec>& initial_point() const { return initial_; }

  double objective_value(const Vec& x) const;
  /// Largest violation of any constraint at x (0 when feasible).
  double max_violation(const Vec& x) const;
  double violation(int id, const Vec& x) const;

 private:
  void check_index(const LinExpr& e) const;
  int num_vars_ = 0;
  std::vector<std::string> names_;
  LinExpr objective_;
  std::vector<LogdetTerm> logdet_;
  std::vector<Constraint> constraints_;
  std::optional<Vec> initial_;
};

enum class Status { optimal, infeasible, unbounded, stalled };

const char* to_string(Status s);

struct Settings {
  double feas_tol = 1e-8;
  double gap_tol = 1e-9;          // absolute bound on the barrier duality gap
  double newton_tol = 1e-10;      // half squared Newton decrement
  double mu = 20.0;               // barrier parameter growth per outer stage
  int max_newton = 3000;          // total Newton steps across both phases
};

struct ConicSolution {
  Status status = Status::stalled;
  Vec x;
  double objective = 0.0;
  double max_violation = 0.0;
  double gap = 0.0;
  int newton_steps = 0;
  std::string message;

  double value(int index) const { return x(index); }
  Vec value(const VecVar& v) const { return x.segment(v.offset, v.n); }
  Mat value(const SymVar& v) const { return smat(x.segment(v.offset, svec_size(v.n)), v.n); }
  double value(const LinExpr& e) const { return e.eval(x); }
};

/// Barrier interior-point method (phase I for a strictly feasible start, then
/// path following). Never throws on numerical trouble; reports a status.
ConicSolution solve(const ConicProblem& problem, const Settings& settings = {});

/// Writes the problem in CBF (Conic Benchmark Format, version 3). Problems with
/// log-det objective terms cannot be expressed and raise ShapeMismatch.
void write_cbf(const ConicProblem& problem, std::ostream& os);

}  // namespace minsense::conic
