#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <vector>

#include "dmopt/algorithms.hpp"
#include "dmopt/metrics.hpp"
#include "dmopt/run_log.hpp"
#include "test_helpers.hpp"

using dmopt::PcaProblem;
using dmopt::Rng;
using dmopt::StiefelPointXd;
using Eigen::MatrixXd;

namespace {

std::vector<StiefelPointXd> cluster_around(const MatrixXd& base, int n, double scale,
                                           Rng& rng) {
  std::vector<StiefelPointXd> pts;
  for (int i = 0; i < n; ++i) {
    MatrixXd noise = rng.gaussian(base.rows(), base.cols());
    noise *= scale / noise.norm();
    pts.push_back(dmopt::polar_project((base + noise).eval()));
  }
  return pts;
}

}  // namespace

TEST_CASE("stationarity pair vanishes at the ground truth") {
  auto prob = dmopt::gen_synthetic(4, 50, 8, 3, 0.8, 11);
  std::vector<StiefelPointXd> pts(4, *prob.ground_truth);
  auto [dev, grad] = dmopt::stationarity_pair(pts, prob);
  CHECK(dev <= 1e-20);
  CHECK(grad <= 1e-16);
}

TEST_CASE("stationarity pair at a shared non-stationary point") {
  auto prob = dmopt::gen_synthetic(4, 50, 8, 3, 0.8, 12);
  Rng rng(71);
  StiefelPointXd x(testutil::qr_orthonormal(8, 3, rng));
  std::vector<StiefelPointXd> pts(4, x);
  auto [dev, grad] = dmopt::stationarity_pair(pts, prob);
  CHECK(dev <= 1e-20);
  const double expect = prob.mean_riemannian_gradient_at(x).squaredNorm();
  CHECK(grad == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("stationarity pair matches a direct recomputation on a cluster") {
  auto prob = dmopt::gen_synthetic(4, 50, 8, 3, 0.8, 13);
  Rng rng(72);
  auto pts = cluster_around(testutil::qr_orthonormal(8, 3, rng), 4, 0.05, rng);
  auto [dev, grad] = dmopt::stationarity_pair(pts, prob);

  MatrixXd mean = MatrixXd::Zero(8, 3);
  for (const auto& p : pts) mean += p.matrix();
  mean /= 4.0;
  auto bar = dmopt::polar_project(mean);
  double dev_ref = 0.0;
  for (const auto& p : pts) dev_ref += (p.matrix() - bar.matrix()).squaredNorm();
  dev_ref /= 4.0;
  CHECK(dev == doctest::Approx(dev_ref).epsilon(1e-12));
  CHECK(grad == doctest::Approx(prob.mean_riemannian_gradient_at(bar).squaredNorm())
                    .epsilon(1e-12));
}

TEST_CASE("antipodal agents put the mean outside the projection tube") {
  PcaProblem prob;
  prob.d = 2;
  prob.r = 1;
  prob.locals.emplace_back(MatrixXd::Identity(2, 2));
  MatrixXd up(2, 1), down(2, 1);
  up << 1, 0;
  down << -1, 0;
  std::vector<StiefelPointXd> pts{StiefelPointXd(up), StiefelPointXd(down)};
  CHECK_THROWS_WITH_AS(dmopt::stationarity_pair(pts, prob),
                       doctest::Contains("tube-violation"), dmopt::NumericalError);

  std::vector<MatrixXd> aux{up, down};
  auto diag = dmopt::compute_diagnostics(pts, aux, aux, aux, prob, std::nullopt);
  CHECK_FALSE(diag.tube_ok);
  CHECK(diag.tube_dist >= 1.0);
  CHECK(std::isnan(diag.stationarity));
  CHECK(std::isnan(diag.omega3));
  CHECK(diag.omega1 == 0.0);  // compression references still well-defined
}

TEST_CASE("diagnostics on a hand-stacked two-agent state") {
  PcaProblem prob;
  prob.d = 2;
  prob.r = 1;
  MatrixXd a(1, 2);
  a << 1.0, 0.5;
  prob.locals.emplace_back(a);
  prob.locals.emplace_back((2.0 * a).eval());

  MatrixXd x1(2, 1), x2(2, 1);
  x1 << 1, 0;
  x2 << 0.8, 0.6;
  std::vector<StiefelPointXd> pts{StiefelPointXd(x1), StiefelPointXd(x2)};
  std::vector<MatrixXd> xt{0.9 * x1, 1.1 * x2};
  std::vector<MatrixXd> d{0.3 * x1, -0.2 * x2};
  std::vector<MatrixXd> dt{0.25 * x1, -0.25 * x2};
  auto g = dmopt::compute_diagnostics(pts, xt, d, dt, prob, std::nullopt);

  CHECK(g.omega1 == doctest::Approx((x1 - xt[0]).squaredNorm() +
                                    (x2 - xt[1]).squaredNorm()).epsilon(1e-14));
  CHECK(g.omega2 == doctest::Approx((d[0] - dt[0]).squaredNorm() +
                                    (d[1] - dt[1]).squaredNorm()).epsilon(1e-14));
  MatrixXd dhat = 0.5 * (d[0] + d[1]);
  CHECK(g.omega4 == doctest::Approx((d[0] - dhat).squaredNorm() +
                                    (d[1] - dhat).squaredNorm()).epsilon(1e-14));
  CHECK(g.omega5 == doctest::Approx(2.0 * dhat.squaredNorm()).epsilon(1e-14));
  MatrixXd mean = 0.5 * (x1 + x2);
  auto bar = dmopt::polar_project(mean);
  double omega3 = (x1 - bar.matrix()).squaredNorm() + (x2 - bar.matrix()).squaredNorm();
  CHECK(g.omega3 == doctest::Approx(omega3).epsilon(1e-12));
  CHECK(g.consensus_error == doctest::Approx(std::sqrt(omega3)).epsilon(1e-12));
  CHECK(g.objective ==
        doctest::Approx(0.5 * (dmopt::local_objective(prob.locals[0], pts[0]) +
                               dmopt::local_objective(prob.locals[1], pts[1]))));
}

TEST_CASE("uncompressed runs have identically zero compression errors") {
  auto prob = dmopt::gen_synthetic(4, 50, 8, 3, 0.8, 14);
  auto w = dmopt::metropolis_weights(dmopt::gen_ring(4));
  dmopt::SimulationConfig cfg;
  cfg.algorithm = dmopt::AlgorithmKind::kDprgt;
  cfg.eta = 1.0;
  cfg.iters = 50;
  auto log = dmopt::run_algorithm(prob, w, cfg);
  for (const auto& row : log.rows) {
    CHECK(row.diag.omega1 == 0.0);
    CHECK(row.diag.omega2 == 0.0);
  }
  CHECK(log.rows.front().diag.omega3 == 0.0);
}

TEST_CASE("mean gap: consensus, quadratic scaling, estimated-constant bound") {
  Rng rng(73);
  MatrixXd base = testutil::qr_orthonormal(10, 5, rng);

  std::vector<StiefelPointXd> equal(4, StiefelPointXd(base));
  auto at_consensus = dmopt::mean_gap_check(equal, 1.0);
  CHECK(at_consensus.lhs <= 1e-14);
  CHECK(at_consensus.holds);

  // lhs = ||xbar - xhat|| shrinks quadratically in the perturbation scale
  std::vector<MatrixXd> dirs;
  for (int i = 0; i < 4; ++i) dirs.push_back(rng.gaussian(10, 5).normalized());
  std::vector<double> ts{1e-1, 1e-2, 1e-3}, lhs;
  for (double t : ts) {
    std::vector<StiefelPointXd> pts;
    for (const auto& dir : dirs)
      pts.push_back(dmopt::polar_project((base + t * dir).eval()));
    lhs.push_back(dmopt::mean_gap_check(pts, 1.0).lhs);
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < ts.size(); ++i) {
    const double x = std::log(ts[i]), y = std::log(lhs[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(ts.size());
  const double slope = (sxy - sx * sy / n) / (sxx - sx * sx / n);
  CHECK(slope >= 1.8);
  CHECK(slope <= 2.2);

  // estimated constant bounds fresh samples, rare violations tolerated
  auto sc = dmopt::estimate_constants(10, 5, 500, 21);
  int violations = 0;
  const int tuples = 200;
  for (int s = 0; s < tuples; ++s) {
    Rng trng(dmopt::derive_seed(99, static_cast<std::uint64_t>(s)));
    MatrixXd b = testutil::qr_orthonormal(10, 5, trng);
    auto pts = cluster_around(b, 8, 0.05 + 0.15 * trng.uniform01(), trng);
    if (!dmopt::mean_gap_check(pts, sc.M2).holds) ++violations;
  }
  CHECK(violations <= tuples / 100);

  // precondition: deviations above R/2 are rejected
  std::vector<StiefelPointXd> far;
  MatrixXd flip = base;
  flip.col(0) *= -1.0;
  far.emplace_back(base);
  far.emplace_back(flip);
  CHECK_THROWS_WITH_AS(dmopt::mean_gap_check(far, 1.0), doctest::Contains("out-of-range"),
                       dmopt::ConfigError);
}

TEST_CASE("decay partial sums") {
  std::vector<double> zeros(10, 0.0);
  auto reports = dmopt::rate_decay_check(zeros, {1, 5, 10});
  for (double r : reports) CHECK(r == 0.0);

  std::vector<double> one{0.25};
  CHECK(dmopt::rate_decay_check(one, {1})[0] == doctest::Approx(0.25));

  CHECK_THROWS_AS(dmopt::rate_decay_check(one, {2}), dmopt::ConfigError);
}

TEST_CASE("decay check over a run log uses omega5 / n") {
  auto prob = dmopt::gen_synthetic(4, 50, 8, 3, 0.8, 15);
  auto w = dmopt::metropolis_weights(dmopt::gen_ring(4));
  dmopt::SimulationConfig cfg;
  cfg.algorithm = dmopt::AlgorithmKind::kDprgt;
  cfg.eta = 1.0;
  cfg.iters = 12;
  auto log = dmopt::run_algorithm(prob, w, cfg);
  auto reports = dmopt::rate_decay_check(log, 4, {1, 12});
  CHECK(reports[0] == doctest::Approx(log.rows[1].diag.omega5 / 4.0));
  double sum = 0.0;
  for (int k = 1; k <= 12; ++k) sum += log.rows[static_cast<size_t>(k)].diag.omega5 / 4.0;
  CHECK(reports[1] == doctest::Approx(sum));
}

TEST_CASE("run log CSV shape and determinism of bytes") {
  auto prob = dmopt::gen_synthetic(3, 30, 6, 2, 0.7, 16);
  auto w = dmopt::metropolis_weights(dmopt::gen_ring(3));
  dmopt::SimulationConfig cfg;
  cfg.algorithm = dmopt::AlgorithmKind::kDprgc;
  cfg.compressor = dmopt::CompressorSpec::topk(0.4);
  cfg.eta = 1.0;
  cfg.iters = 7;
  auto log = dmopt::run_algorithm(prob, w, cfg);
  log.config_hash = "deadbeef";
  std::ostringstream os1, os2;
  dmopt::write_runlog_csv(os1, log);
  dmopt::write_runlog_csv(os2, log);
  CHECK(os1.str() == os2.str());
  std::istringstream is(os1.str());
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) ++lines;
  CHECK(lines == 2 + 1 + 8);  // two comment lines, header, 8 rows
}
