#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "dmopt/errors.hpp"
#include "dmopt/graph.hpp"
#include "dmopt/stiefel.hpp"

// Single-step consensus iterations on the manifold. Both variants average
// with one application of W per iteration; the projected form contracts the
// consensus error at rate rho1 and the Riemannian form at rho2 inside their
// respective neighborhoods.

namespace dmopt {

struct ConsensusState {
  std::vector<StiefelPointXd> points;
  StiefelPointXd induced_mean;   // xbar = P_M(mean of points)
  double consensus_error = 0.0;  // || X - Xbar ||, stacked Frobenius

  static ConsensusState from_points(std::vector<StiefelPointXd> pts) {
    if (pts.empty()) throw ConfigError("invalid-size: consensus needs n >= 1");
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(pts[0].rows(), pts[0].cols());
    for (const auto& p : pts) mean += p.matrix();
    mean /= static_cast<double>(pts.size());
    StiefelPointXd bar = polar_project(mean);
    double err2 = 0.0;
    for (const auto& p : pts) err2 += (p.matrix() - bar.matrix()).squaredNorm();
    return ConsensusState{std::move(pts), std::move(bar), std::sqrt(err2)};
  }
};

namespace detail {

inline std::vector<Eigen::MatrixXd> mixed_points(const ConsensusState& state,
                                                 const MixingMatrix& w) {
  std::vector<Eigen::MatrixXd> in;
  in.reserve(state.points.size());
  for (const auto& p : state.points) in.push_back(p.matrix());
  return w.mix(in);
}

}  // namespace detail

// x_i <- P_M((1 - gamma) x_i + gamma sum_j W_ij x_j), synchronous snapshot.
inline ConsensusState pgd_consensus_step(const ConsensusState& state,
                                         const MixingMatrix& w, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("invalid-config: gamma in (0,1]");
  const auto mixed = detail::mixed_points(state, w);
  std::vector<StiefelPointXd> next;
  next.reserve(state.points.size());
  for (size_t i = 0; i < state.points.size(); ++i) {
    Eigen::MatrixXd y =
        (1.0 - gamma) * state.points[i].matrix() + gamma * mixed[i];
    try {
      next.push_back(polar_project(y));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (agent " + std::to_string(i) + ")");
    }
  }
  return ConsensusState::from_points(std::move(next));
}

// x_i <- R_{x_i}(-gamma P_T(x_i - sum_j W_ij x_j)), synchronous snapshot.
inline ConsensusState rgd_consensus_step(const ConsensusState& state,
                                         const MixingMatrix& w, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("invalid-config: gamma in (0,1]");
  const auto mixed = detail::mixed_points(state, w);
  std::vector<StiefelPointXd> next;
  next.reserve(state.points.size());
  for (size_t i = 0; i < state.points.size(); ++i) {
    const Eigen::MatrixXd& x = state.points[i].matrix();
    Eigen::MatrixXd xi = -gamma * tangent_project(x, (x - mixed[i]).eval());
    try {
      next.push_back(retract_polar(state.points[i], xi));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (agent " + std::to_string(i) + ")");
    }
  }
  return ConsensusState::from_points(std::move(next));
}

enum class ConsensusVariant { kProjected, kRiemannian };

struct ConsensusRun {
  std::vector<double> errors;  // per-iteration consensus errors, errors[0] initial
  bool stayed_in_neighborhood = true;  // no error exceeded the initial one
  bool gamma_is_zero = false;          // degenerate no-op run
};

// Iterates one consensus variant until the error reaches tol or the budget.
// With gamma = 0 the step is the identity; this is recorded, not an error.
// For the projected variant, when the initial error lies inside the window
// delta < min(R gamma (1 - sigma2), R/4), leaving the neighborhood is a
// contract violation and throws.
inline ConsensusRun run_consensus(ConsensusState state, const MixingMatrix& w,
                                  double gamma, ConsensusVariant variant,
                                  int max_iters, double tol) {
  if (!(tol > 0.0)) throw ConfigError("invalid-config: tol must be positive");
  ConsensusRun run;
  run.errors.push_back(state.consensus_error);
  if (gamma == 0.0) {
    run.gamma_is_zero = true;
    for (int k = 0; k < max_iters && run.errors.back() > tol; ++k)
      run.errors.push_back(state.consensus_error);
    return run;
  }
  const double delta0 = run.errors.front();
  const double window =
      std::min(1.0 * gamma * (1.0 - w.sigma2), 0.25);  // R = 1 for Stiefel
  const bool enforce_stay =
      variant == ConsensusVariant::kProjected && delta0 > 0.0 && delta0 < window;
  for (int k = 0; k < max_iters && run.errors.back() > tol; ++k) {
    state = variant == ConsensusVariant::kProjected
                ? pgd_consensus_step(state, w, gamma)
                : rgd_consensus_step(state, w, gamma);
    run.errors.push_back(state.consensus_error);
    if (state.consensus_error > delta0 + 1e-9) {
      run.stayed_in_neighborhood = false;
      if (enforce_stay)
        throw NumericalError("neighborhood-escape: consensus error " +
                             std::to_string(state.consensus_error) +
                             " exceeded initial " + std::to_string(delta0) +
                             " at iteration " + std::to_string(k + 1));
    }
  }
  return run;
}

// Linear rates of the two variants.
//   rho1 = (R - R gamma (1 - sigma2)) / (R - delta)
//   rho2 = R (1 - gamma + gamma sigma2) / (R - delta) + 8 M1 gamma^2 delta
// rho2 reads `delta` as the Riemannian neighborhood radius; delta_max_rho2
// is the largest radius for which rho2 < 1 (given M1).
struct RateBound {
  double rho1 = 0.0;
  double rho2 = 0.0;
  double gamma = 1.0;
  double delta = 0.0;
  bool rho1_valid = false;  // rho1 < 1 and delta inside its window
  bool rho2_valid = false;  // rho2 < 1
  double delta_max_rho1 = 0.0;
  double delta_max_rho2 = 0.0;
};

inline RateBound theoretical_rates(const SmoothnessConstants& sc, double sigma2,
                                   double gamma, double delta) {
  const double R = sc.R;
  if (!(delta < R)) throw ConfigError("invalid-radius: delta must be < R");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("invalid-config: gamma in (0,1]");
  RateBound rb;
  rb.gamma = gamma;
  rb.delta = delta;
  rb.rho1 = (R - R * gamma * (1.0 - sigma2)) / (R - delta);
  rb.delta_max_rho1 = std::min(R * gamma * (1.0 - sigma2), R / 4.0);
  rb.rho1_valid = delta < rb.delta_max_rho1 && rb.rho1 < 1.0;

  const double a = 1.0 - gamma + gamma * sigma2;
  rb.rho2 = R * a / (R - delta) + 8.0 * sc.M1 * gamma * gamma * delta;
  rb.rho2_valid = rb.rho2 < 1.0;
  if (sc.M1 > 0.0) {
    const double c = sc.M1 * gamma * gamma * R;
    const double disc = (8.0 * c - 1.0) * (8.0 * c - 1.0) + 32.0 * c * a;
    const double root =
        (8.0 * c + 1.0 - std::sqrt(disc)) / (16.0 * sc.M1 * gamma * gamma);
    rb.delta_max_rho2 = std::min(std::max(root, 0.0), R / 4.0);
  } else {
    rb.delta_max_rho2 = std::min(R * (1.0 - a), R / 4.0);
  }
  return rb;
}

// Trajectory export: "iteration,consensus_error" rows.
inline void write_consensus_csv(std::ostream& os, const ConsensusRun& run) {
  os << "iter,consensus_error\n";
  for (size_t k = 0; k < run.errors.size(); ++k)
    os << k << ',' << format_double(run.errors[k]) << '\n';
}

}  // namespace dmopt
