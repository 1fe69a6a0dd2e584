#pragma once

#include <cmath>
#include <random>

#include "minsense/geometry.hpp"
#include "minsense/linalg.hpp"

namespace testing_util {

using minsense::Mat;
using minsense::Polytope;
using minsense::Vec;

inline Polytope box(double x0, double x1, double y0, double y1) {
  Polytope p;
  p.A.resize(4, 2);
  p.A << 1, 0, -1, 0, 0, 1, 0, -1;
  p.b.resize(4);
  p.b << x1, -x0, y1, -y0;
  return p;
}

inline Polytope halfspace(const Vec& a, double b) {
  Polytope p;
  p.A = a.transpose();
  p.b = Vec::Constant(1, b);
  return p;
}

// Triangle through three counter-clockwise vertices.
inline Polytope triangle(const Eigen::Vector2d& p0, const Eigen::Vector2d& p1, const Eigen::Vector2d& p2) {
  const Eigen::Vector2d v[3] = {p0, p1, p2};
  Polytope p;
  p.A.resize(3, 2);
  p.b.resize(3);
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector2d e = v[(i + 1) % 3] - v[i];
    const Eigen::Vector2d n(e.y(), -e.x());  // outward for ccw order
    p.A.row(i) = n.transpose();
    p.b(i) = n.dot(v[i]);
  }
  return p;
}

// Random SPD matrix with condition number at most cond.
inline Mat random_spd(std::mt19937_64& rng, int d, double scale, double cond) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
  const Eigen::HouseholderQR<Mat> qr(m);
  const Mat U = qr.householderQ();
  Vec ev(d);
  for (int i = 0; i < d; ++i) ev(i) = scale * std::pow(cond, u(rng));
  ev(0) = scale;
  return minsense::symmetrize(U * ev.asDiagonal() * U.transpose());
}

inline Vec random_vec(std::mt19937_64& rng, int d, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = u(rng);
  return v;
}

}  // namespace testing_util
