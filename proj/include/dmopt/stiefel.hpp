#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmopt/errors.hpp"
#include "dmopt/rng.hpp"

// Geometry of the Stiefel manifold St(d, r) = { x : x^T x = I_r } embedded in
// R^{d x r} with the Euclidean metric. Everything here is a pure function of
// its inputs; free functions accept arbitrary Eigen expressions.

namespace dmopt {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

// Relative rank cutoff for the polar factor; below this the nearest point is
// not unique and we reject rather than repair.
inline constexpr double kRankTol = 1e-12;

inline constexpr double kOrthoTol = 1e-10;

template <typename A, typename B>
void check_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                      const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string("dimension: shape mismatch in ") + what);
}

}  // namespace detail

// sym(A) = (A + A^T) / 2.
template <typename Derived>
DenseMatrix<typename Derived::Scalar> sym(const Eigen::MatrixBase<Derived>& a) {
  return (a + a.transpose()) / typename Derived::Scalar(2);
}

// Max-abs deviation of y^T y from the identity; 0 on the manifold.
template <typename Derived>
typename Derived::Scalar orthonormality_defect(const Eigen::MatrixBase<Derived>& y) {
  using Scalar = typename Derived::Scalar;
  DenseMatrix<Scalar> g = y.transpose() * y;
  g.diagonal().array() -= Scalar(1);
  return g.cwiseAbs().maxCoeff();
}

// A d x r matrix with orthonormal columns. Construction validates the
// invariant; the tolerance scales with the entry magnitude so that large
// ambient scales (e.g. image-data gradients) do not trip spurious rejections
// -- at unit scale it is exactly 1e-10.
template <typename Scalar>
class StiefelPoint {
 public:
  using Matrix = DenseMatrix<Scalar>;

  explicit StiefelPoint(Matrix data) : data_(std::move(data)) {
    if (data_.rows() < data_.cols() || data_.cols() < 1)
      throw ConfigError("dimension: Stiefel point needs d >= r >= 1");
    const Scalar defect = orthonormality_defect(data_);
    if (!(defect <= Scalar(detail::kOrthoTol)))
      throw NumericalError("invalid-input: columns not orthonormal (defect " +
                           std::to_string(static_cast<double>(defect)) + ")");
  }

  const Matrix& matrix() const { return data_; }
  Eigen::Index rows() const { return data_.rows(); }
  Eigen::Index cols() const { return data_.cols(); }

 private:
  Matrix data_;
};

using StiefelPointXd = StiefelPoint<double>;

// Orthogonal projector onto the manifold: the polar factor U V^T of a thin
// SVD. Unique nearest point whenever dist(y, M) < R = 1; rank-deficient
// inputs are rejected, not perturbed.
template <typename Derived>
StiefelPoint<typename Derived::Scalar> polar_project(const Eigen::MatrixBase<Derived>& y) {
  using Scalar = typename Derived::Scalar;
  Eigen::JacobiSVD<DenseMatrix<Scalar>> svd(y, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || !(s(s.size() - 1) > detail::kRankTol * s(0)))
    throw NumericalError("singular-input: rank-deficient matrix has no unique polar factor");
  return StiefelPoint<Scalar>(svd.matrixU() * svd.matrixV().transpose());
}

// Tangent component of v at x: v - x sym(x^T v). Idempotent and self-adjoint.
template <typename DX, typename DV>
DenseMatrix<typename DX::Scalar> tangent_project(const Eigen::MatrixBase<DX>& x,
                                                 const Eigen::MatrixBase<DV>& v) {
  detail::check_same_shape(x, v, "tangent_project");
  return v - x * sym(x.transpose() * v);
}

template <typename Scalar>
DenseMatrix<Scalar> tangent_project(const StiefelPoint<Scalar>& x,
                                    const DenseMatrix<Scalar>& v) {
  return tangent_project(x.matrix(), v);
}

// A tangent vector anchored at a base point; validates x^T t + t^T x = 0 with
// the same scale-aware tolerance as StiefelPoint.
template <typename Scalar>
class TangentVector {
 public:
  using Matrix = DenseMatrix<Scalar>;

  TangentVector(StiefelPoint<Scalar> base, Matrix data)
      : base_(std::move(base)), data_(std::move(data)) {
    detail::check_same_shape(base_.matrix(), data_, "TangentVector");
    const Matrix g = base_.matrix().transpose() * data_;
    const Scalar defect = (g + g.transpose()).cwiseAbs().maxCoeff();
    const Scalar scale = std::max(Scalar(1), data_.cwiseAbs().maxCoeff());
    if (!(defect <= Scalar(detail::kOrthoTol) * scale))
      throw NumericalError("invalid-input: not tangent at base (defect " +
                           std::to_string(static_cast<double>(defect)) + ")");
  }

  const StiefelPoint<Scalar>& base() const { return base_; }
  const Matrix& matrix() const { return data_; }

 private:
  StiefelPoint<Scalar> base_;
  Matrix data_;
};

using TangentVectorXd = TangentVector<double>;

// Polar retraction: R_x(xi) = P_M(x + xi). First-order agreement
// || R_x(t xi) - x - t xi || = O(t^2) for tangent xi.
template <typename Scalar>
StiefelPoint<Scalar> retract_polar(const StiefelPoint<Scalar>& x,
                                   const DenseMatrix<Scalar>& xi) {
  detail::check_same_shape(x.matrix(), xi, "retract_polar");
  return polar_project((x.matrix() + xi).eval());
}

// Frobenius distance to the manifold, || y - P_M(y) ||.
template <typename Derived>
typename Derived::Scalar dist_to_manifold(const Eigen::MatrixBase<Derived>& y) {
  auto p = polar_project(y);
  return (y - p.matrix()).norm();
}

// Subspace distance modulo the right orthogonal action:
// d_s(x, y) = min_{Q orthogonal} || x Q - y || = sqrt(2r - 2 sum_i sigma_i(x^T y)).
// Evaluated as || x Q* - y || with the optimal alignment Q* = U V^T from the
// SVD of x^T y, which is exact near zero where the trace formula cancels.
template <typename Scalar>
Scalar procrustes_distance(const StiefelPoint<Scalar>& x, const StiefelPoint<Scalar>& y) {
  detail::check_same_shape(x.matrix(), y.matrix(), "procrustes_distance");
  DenseMatrix<Scalar> g = x.matrix().transpose() * y.matrix();
  Eigen::JacobiSVD<DenseMatrix<Scalar>> svd(g, Eigen::ComputeFullU | Eigen::ComputeFullV);
  DenseMatrix<Scalar> q = svd.matrixU() * svd.matrixV().transpose();
  return (x.matrix() * q - y.matrix()).norm();
}

// Seeded random point: polar factor of a standard Gaussian matrix.
inline StiefelPointXd random_stiefel(Eigen::Index d, Eigen::Index r, Rng& rng) {
  return polar_project(rng.gaussian(d, r));
}

// Random unit-Frobenius-norm element of the normal space at x, which for the
// Stiefel manifold is { x S : S symmetric }.
inline Eigen::MatrixXd random_normal_direction(const StiefelPointXd& x, Rng& rng) {
  Eigen::MatrixXd s = sym(rng.gaussian(x.cols(), x.cols()));
  Eigen::MatrixXd v = x.matrix() * s;
  const double n = v.norm();
  if (n > 0) v /= n;
  return v;
}

// Constants attached to the proximal-smoothness structure. R is exact for the
// Stiefel manifold; Q, M1, M2 are empirical lower bounds estimated by
// sampling and are used for diagnostics only.
struct SmoothnessConstants {
  double R = 1.0;   // proximal-smoothness radius
  double Q = 0.0;   // second-order projection constant
  double M1 = 0.0;  // retraction-vs-projection constant
  double M2 = 0.0;  // Euclidean-mean vs manifold-mean gap constant
};

namespace detail {

// Sample index j always draws from the stream derive_seed(seed, j), so an
// estimate over N' > N samples includes the first N samples verbatim and the
// empirical max is monotone under refinement.
inline Rng sample_rng(std::uint64_t seed, std::uint64_t index) {
  return Rng(derive_seed(seed, splitmix64(0xC0FFEEULL + index)));
}

}  // namespace detail

// Empirical estimate of (R, Q, M1, M2) on St(d, r).
//
//   Q  = max ||P_M(x+u) - x - P_T(u)|| / ||u||^2   over ||u|| <= R/2
//   M1 = max ||P_M(x+u) - R_x(P_T(u))|| / ||u||^2  over the same samples
//   M2 = max n ||xbar - xhat|| / ||X - Xbar||^2    over near-consensus tuples
//
// Reported values are lower bounds on the true constants.
inline SmoothnessConstants estimate_constants(Eigen::Index d, Eigen::Index r,
                                              int samples, std::uint64_t seed,
                                              int agents_for_m2 = 8) {
  if (samples < 100) throw ConfigError("invalid-config: estimate_constants needs samples >= 100");
  SmoothnessConstants sc;
  sc.R = 1.0;
  for (int j = 0; j < samples; ++j) {
    Rng rng = detail::sample_rng(seed, static_cast<std::uint64_t>(j));
    const StiefelPointXd x = random_stiefel(d, r, rng);

    // log-uniform magnitude in [1e-2, R/2]; zero-norm draws are excluded by
    // construction of the scaling
    Eigen::MatrixXd u = rng.gaussian(d, r);
    const double un = u.norm();
    if (un == 0.0) continue;
    const double target = 1e-2 * std::pow((sc.R / 2) / 1e-2, rng.uniform01());
    u *= target / un;

    const Eigen::MatrixXd pt = tangent_project(x.matrix(), u);
    const StiefelPointXd proj = polar_project((x.matrix() + u).eval());
    const double u2 = target * target;
    sc.Q = std::max(sc.Q, (proj.matrix() - x.matrix() - pt).norm() / u2);
    const StiefelPointXd retr = retract_polar(x, pt);
    sc.M1 = std::max(sc.M1, (proj.matrix() - retr.matrix()).norm() / u2);

    // near-consensus tuple for the mean-gap ratio
    const int n = agents_for_m2;
    const double t = 1e-2 * std::pow((sc.R / 4) / 1e-2, rng.uniform01());
    Eigen::MatrixXd xhat = Eigen::MatrixXd::Zero(d, r);
    std::vector<Eigen::MatrixXd> pts;
    pts.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Eigen::MatrixXd dir = rng.gaussian(d, r);
      dir *= t / dir.norm();
      pts.push_back(polar_project((x.matrix() + dir).eval()).matrix());
      xhat += pts.back();
    }
    xhat /= double(n);
    const StiefelPointXd xbar = polar_project(xhat);
    double dev2 = 0.0;
    for (const auto& p : pts) dev2 += (p - xbar.matrix()).squaredNorm();
    if (dev2 > 0)
      sc.M2 = std::max(sc.M2, double(n) * (xbar.matrix() - xhat).norm() / dev2);
  }
  return sc;
}

}  // namespace dmopt
