#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "minsense/linalg.hpp"

namespace minsense {

/// Polyhedral set {x : A x <= b} in H-representation. One row per face.
template <typename Scalar>
struct PolytopeT {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> A;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> b;

  int faces() const { return static_cast<int>(A.rows()); }
  int dim() const { return static_cast<int>(A.cols()); }

  template <typename Derived>
  bool contains(const Eigen::MatrixBase<Derived>& x, Scalar tol = Scalar(0)) const {
    return ((A * x - b).array() <= tol).all();
  }
};

using Polytope = PolytopeT<double>;

/// Confidence ellipse {x : (x - center)^T shape^{-1} (x - center) <= level}.
template <typename Scalar>
struct EllipseT {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> center;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> shape;
  Scalar level;
};

using Ellipse = EllipseT<double>;

/// Squared Mahalanobis distance (x - c)^T P^{-1} (x - c) via Cholesky.
template <typename Scalar, typename Derived>
Scalar mahalanobis2(const EllipseT<Scalar>& e, const Eigen::MatrixBase<Derived>& x) {
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> r = x - e.center;
  Eigen::LLT<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> llt(e.shape);
  return r.dot(llt.solve(r));
}

template <typename Scalar, typename Derived>
bool ellipse_contains(const EllipseT<Scalar>& e, const Eigen::MatrixBase<Derived>& x) {
  return mahalanobis2(e, x) <= e.level;
}

/// Throws DomainError if the shape is asymmetric or not positive definite.
void validate_ellipse(const Ellipse& e);

/// One single-faced polytope {x : -a_l^T x <= -b_l} per face of p. Their union
/// is the closure of the complement of p.
std::vector<Polytope> complement_halfspaces(const Polytope& p);

/// Exact emptiness test by Fourier-Motzkin elimination (intended for small d).
bool is_nonempty(const Polytope& p, double tol = 1e-12);

/// Vertices of a bounded 2-D polytope by pairwise face intersection.
std::vector<Eigen::Vector2d> vertices_2d(const Polytope& p, double tol = 1e-9);

bool is_bounded_2d(const Polytope& p, double tol = 1e-12);

/// True if inner is contained in outer (both H-representations).
bool polytope_subset(const Polytope& inner, const Polytope& outer, double tol = 1e-9);

/// Unified obstacle list: user obstacles first, then one half-space per domain
/// wall. target_out holds the target complement as half-spaces.
struct Environment {
  Polytope domain;
  std::vector<Polytope> obstacles;
  Polytope target;
  std::vector<Polytope> unified;
  std::vector<Polytope> target_out;
  std::vector<std::string> warnings;

  int dim() const { return domain.dim(); }
  int num_obstacles() const { return static_cast<int>(obstacles.size()); }
  int num_walls() const { return domain.faces(); }
  int num_unified() const { return static_cast<int>(unified.size()); }
};

/// Validates and assembles the unified obstacle set.
/// Throws EmptyPolytope for infeasible obstacles (or an empty target/domain),
/// TargetOutsideDomain when the target is not contained in the domain.
Environment build_environment(Polytope domain, std::vector<Polytope> obstacles, Polytope target);

/// Inverse CDF of the chi-squared distribution with d degrees of freedom.
double chi2_quantile(double pr, int d);

/// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);

/// Chi-squared CDF with d degrees of freedom.
double chi2_cdf(double x, int d);

}  // namespace minsense
