#pragma once

#include <Eigen/Dense>

namespace minsense {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// log det of a symmetric positive-definite matrix via Cholesky.
/// Throws SingularMatrix when the factorization fails.
double logdet_spd(const Mat& m);

/// Inverse of a symmetric positive-definite matrix; symmetrized on return.
Mat inverse_spd(const Mat& m);

/// True when m is symmetric within tol (absolute, entrywise).
bool is_symmetric(const Mat& m, double tol = 1e-12);

double min_eigenvalue(const Mat& m);

/// 2-norm condition number of a symmetric positive-definite matrix.
double condition_spd(const Mat& m);

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// Scaled upper-triangle vectorization: off-diagonals carry a sqrt(2) factor
/// so that <svec(A), svec(B)> = tr(AB).
Vec svec(const Mat& m);
Mat smat(const Vec& v, int n);

inline int svec_size(int n) { return n * (n + 1) / 2; }

}  // namespace minsense
