#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "dmopt/errors.hpp"
#include "dmopt/pca.hpp"
#include "dmopt/stiefel.hpp"

// Stationarity measures and the per-iteration error quantities
//   omega1 = ||X - Xtilde||^2    omega2 = ||D - Dtilde||^2
//   omega3 = ||X - Xbar||^2      omega4 = ||D - Dhat||^2
//   omega5 = ||Dhat||^2
// in the stacked convention ||V||^2 = sum_i ||v_i||^2. The gradient term of
// the stationarity pair needs global data; it is a harness-side diagnostic,
// never something an agent computes.

namespace dmopt {

struct IterationDiagnostics {
  double omega1 = 0.0;
  double omega2 = 0.0;
  double omega3 = 0.0;
  double omega4 = 0.0;
  double omega5 = 0.0;
  double consensus_error = 0.0;       // sqrt(omega3)
  double consensus_error_mean = 0.0;  // omega3 / n
  double stationarity = 0.0;          // ||grad f(xbar)||^2
  double procrustes_to_truth = std::numeric_limits<double>::quiet_NaN();
  double objective = 0.0;
  bool tube_ok = true;    // mean inside the projection tube
  double tube_dist = 0.0; // dist(xhat, M)
  std::int64_t entries_this_iter = 0;
  std::int64_t cumulative_entries = 0;
};

namespace detail {

inline Eigen::MatrixXd stack_mean(const std::vector<Eigen::MatrixXd>& vs) {
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(vs[0].rows(), vs[0].cols());
  for (const auto& v : vs) mean += v;
  return mean / static_cast<double>(vs.size());
}

inline Eigen::MatrixXd points_mean(const std::vector<StiefelPointXd>& pts) {
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(pts[0].rows(), pts[0].cols());
  for (const auto& p : pts) mean += p.matrix();
  return mean / static_cast<double>(pts.size());
}

// sqrt(sum_i (sigma_i - 1)^2): the manifold distance expressed in singular
// values, defined for any matrix including rank-deficient means.
inline double tube_distance(const Eigen::MatrixXd& y) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(y);
  return std::sqrt((svd.singularValues().array() - 1.0).square().sum());
}

}  // namespace detail

// The two quantities of epsilon-stationarity: mean squared deviation from the
// induced mean and the squared Riemannian gradient norm of the aggregate
// objective at the induced mean.
inline std::pair<double, double> stationarity_pair(const std::vector<StiefelPointXd>& points,
                                                   const PcaProblem& problem) {
  if (points.empty()) throw ConfigError("invalid-size: stationarity needs n >= 1");
  Eigen::MatrixXd xhat = detail::points_mean(points);
  const double dist = detail::tube_distance(xhat);
  if (!(dist < 1.0))  // R = 1
    throw NumericalError("tube-violation: dist(xhat, M) = " + std::to_string(dist));
  StiefelPointXd xbar = polar_project(xhat);
  double dev2 = 0.0;
  for (const auto& p : points) dev2 += (p.matrix() - xbar.matrix()).squaredNorm();
  const double grad2 = problem.mean_riemannian_gradient_at(xbar).squaredNorm();
  return {dev2 / static_cast<double>(points.size()), grad2};
}

// All per-iteration error quantities from a state snapshot. A tube violation
// voids the xbar-dependent fields (NaN, tube_ok = false) but never throws:
// the run continues and the row records the flag.
inline IterationDiagnostics compute_diagnostics(
    const std::vector<StiefelPointXd>& points, const std::vector<Eigen::MatrixXd>& x_tilde,
    const std::vector<Eigen::MatrixXd>& d, const std::vector<Eigen::MatrixXd>& d_tilde,
    const PcaProblem& problem, const std::optional<StiefelPointXd>& truth) {
  const size_t n = points.size();
  IterationDiagnostics g;
  for (size_t i = 0; i < n; ++i) {
    g.omega1 += (points[i].matrix() - x_tilde[i]).squaredNorm();
    g.omega2 += (d[i] - d_tilde[i]).squaredNorm();
  }
  Eigen::MatrixXd dhat = detail::stack_mean(d);
  for (size_t i = 0; i < n; ++i) g.omega4 += (d[i] - dhat).squaredNorm();
  g.omega5 = static_cast<double>(n) * dhat.squaredNorm();
  g.objective = problem.global_objective(points);

  // A shared iterate is its own induced mean; projecting it would only add
  // rounding noise to an exactly-zero consensus error.
  bool all_equal = true;
  for (size_t i = 1; i < n && all_equal; ++i)
    all_equal = points[i].matrix() == points[0].matrix();

  Eigen::MatrixXd xhat = detail::points_mean(points);
  g.tube_dist = all_equal ? 0.0 : detail::tube_distance(xhat);
  if (!(g.tube_dist < 1.0)) {
    g.tube_ok = false;
    g.omega3 = std::numeric_limits<double>::quiet_NaN();
    g.consensus_error = g.consensus_error_mean = g.stationarity = g.omega3;
    return g;
  }
  StiefelPointXd xbar = all_equal ? points[0] : polar_project(xhat);
  for (size_t i = 0; i < n; ++i)
    g.omega3 += (points[i].matrix() - xbar.matrix()).squaredNorm();
  g.consensus_error = std::sqrt(g.omega3);
  g.consensus_error_mean = g.omega3 / static_cast<double>(n);
  g.stationarity = problem.mean_riemannian_gradient_at(xbar).squaredNorm();
  if (truth) g.procrustes_to_truth = procrustes_distance(xbar, *truth);
  return g;
}

struct MeanGapReport {
  double lhs = 0.0;  // || xbar - xhat ||
  double rhs = 0.0;  // M2 ||X - Xbar||^2 / n
  bool holds = true;
};

// Second-order gap between the Euclidean mean and the induced mean.
inline MeanGapReport mean_gap_check(const std::vector<StiefelPointXd>& points, double m2) {
  Eigen::MatrixXd xhat = detail::points_mean(points);
  const double dist = detail::tube_distance(xhat);
  if (!(dist < 1.0))
    throw ConfigError("out-of-range: mean lies outside the projection tube (dist " +
                      std::to_string(dist) + ")");
  StiefelPointXd xbar = polar_project(xhat);
  double dev2 = 0.0, maxdev = 0.0;
  for (const auto& p : points) {
    const double d2 = (p.matrix() - xbar.matrix()).squaredNorm();
    dev2 += d2;
    maxdev = std::max(maxdev, std::sqrt(d2));
  }
  if (!(maxdev <= 0.5))  // R / 2 with R = 1
    throw ConfigError("out-of-range: max_i ||x_i - xbar|| = " + std::to_string(maxdev) +
                      " exceeds R/2");
  MeanGapReport rep;
  rep.lhs = (xbar.matrix() - xhat).norm();
  rep.rhs = m2 * dev2 / static_cast<double>(points.size());
  rep.holds = rep.lhs <= rep.rhs + 1e-9;
  return rep;
}

// Partial sums K * mean_{k<=K} ||ghat_k||^2; bounded in K under the O(1/K)
// decay of the squared mean gradient norm.
inline std::vector<double> rate_decay_check(const std::vector<double>& ghat_sq,
                                            const std::vector<int>& windows) {
  for (int k : windows)
    if (k < 1 || static_cast<size_t>(k) > ghat_sq.size())
      throw ConfigError("invalid-config: decay window exceeds log length");
  std::vector<double> out;
  out.reserve(windows.size());
  for (int k : windows) {
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += ghat_sq[static_cast<size_t>(i)];
    out.push_back(sum);  // K * (sum / K)
  }
  return out;
}

}  // namespace dmopt
