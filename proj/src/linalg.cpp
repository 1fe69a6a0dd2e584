#include "minsense/linalg.hpp"

#include <cmath>
#include <limits>

#include "minsense/errors.hpp"

namespace minsense {

double logdet_spd(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) throw SingularMatrix("logdet: matrix is not positive definite");
  const Mat& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0)) throw SingularMatrix("logdet: non-positive pivot");
    acc += std::log(l(i, i));
  }
  return 2.0 * acc;
}

Mat inverse_spd(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) throw SingularMatrix("inverse: matrix is not positive definite");
  Mat inv = llt.solve(Mat::Identity(m.rows(), m.cols()));
  return symmetrize(inv);
}

bool is_symmetric(const Mat& m, double tol) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

double min_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double condition_spd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  if (!(ev(0) > 0.0)) return std::numeric_limits<double>::infinity();
  return ev(ev.size() - 1) / ev(0);
}

Vec svec(const Mat& m) {
  const int n = static_cast<int>(m.rows());
  Vec v(svec_size(n));
  int idx = 0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) v(idx++) = (i == j) ? m(i, j) : std::sqrt(2.0) * m(i, j);
  return v;
}

Mat smat(const Vec& v, int n) {
  if (v.size() != svec_size(n)) throw ShapeMismatch("smat: wrong vector length");
  Mat m(n, n);
  int idx = 0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) {
      const double e = (i == j) ? v(idx) : v(idx) / std::sqrt(2.0);
      m(i, j) = e;
      m(j, i) = e;
      ++idx;
    }
  return m;
}

}  // namespace minsense
