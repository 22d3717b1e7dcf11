#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "dmopt/compression.hpp"
#include "dmopt/rng.hpp"

using dmopt::CompressorKind;
using dmopt::CompressorSpec;
using Eigen::MatrixXd;

TEST_CASE("spec parsing") {
  CHECK(CompressorSpec::parse("identity").kind == CompressorKind::kIdentity);
  auto tk = CompressorSpec::parse("topk:0.4");
  CHECK(tk.kind == CompressorKind::kTopKColumns);
  CHECK(tk.fraction == doctest::Approx(0.4));
  auto qz = CompressorSpec::parse("quant:8");
  CHECK(qz.bits == 8);
  CHECK_THROWS_AS(CompressorSpec::parse("noise:0.1"), dmopt::ConfigError);
  CHECK_THROWS_AS(CompressorSpec::parse("topk:1.5"), dmopt::ConfigError);
  CHECK_THROWS_AS(CompressorSpec::parse("topk:x"), dmopt::ConfigError);
  CHECK_THROWS_AS(CompressorSpec::parse("quant:0"), dmopt::ConfigError);
}

TEST_CASE("identity passes inputs through with alpha 1") {
  dmopt::Rng rng(31);
  MatrixXd x = rng.gaussian(6, 4);
  auto spec = CompressorSpec::identity();
  CHECK(dmopt::compress(spec, x) == x);
  CHECK(spec.alpha_for(6) == 1.0);
}

TEST_CASE("top-k on a hand-worked column") {
  MatrixXd x(3, 1);
  x << 3, 1, -2;
  auto spec = CompressorSpec::topk(1.0 / 3.0);
  MatrixXd y = dmopt::compress(spec, x);
  CHECK(y(0, 0) == 3.0);
  CHECK(y(1, 0) == 0.0);
  CHECK(y(2, 0) == 0.0);
  const double residual2 = (y - x).squaredNorm();
  CHECK(residual2 == doctest::Approx(5.0));
  CHECK(residual2 <= (1.0 - spec.alpha_for(3)) * x.squaredNorm());
}

TEST_CASE("top-k keeps ceil(q*d) rows per column, lowest index first on ties") {
  auto spec = CompressorSpec::topk(0.4);
  CHECK(spec.kept_rows(10) == 4);
  CHECK(spec.alpha_for(10) == doctest::Approx(0.4));

  MatrixXd ones = MatrixXd::Ones(5, 1);
  MatrixXd y = dmopt::compress(CompressorSpec::topk(0.4), ones);  // k = 2
  CHECK(y(0, 0) == 1.0);
  CHECK(y(1, 0) == 1.0);
  CHECK(y(2, 0) == 0.0);
  CHECK(y(3, 0) == 0.0);
  CHECK(y(4, 0) == 0.0);
}

TEST_CASE("top-k is idempotent and support-bounded") {
  dmopt::Rng rng(32);
  auto spec = CompressorSpec::topk(0.3);
  for (int trial = 0; trial < 100; ++trial) {
    MatrixXd x = rng.gaussian(9, 4);
    MatrixXd once = dmopt::compress(spec, x);
    MatrixXd twice = dmopt::compress(spec, once);
    CHECK(once == twice);
    const Eigen::Index k = spec.kept_rows(9);
    for (Eigen::Index j = 0; j < once.cols(); ++j)
      CHECK((once.col(j).array() != 0.0).count() <= k);
  }
}

TEST_CASE("transmitted-entry accounting") {
  CHECK(dmopt::nnz_transmitted(CompressorSpec::identity(), 10, 5) == 50);
  CHECK(dmopt::nnz_transmitted(CompressorSpec::topk(0.4), 10, 5) == 20);
  CHECK(dmopt::nnz_transmitted(CompressorSpec::topk(1.0), 10, 5) == 50);
  CHECK(dmopt::nnz_transmitted(CompressorSpec::quantizer(8), 10, 5) == 50);
  CHECK(dmopt::entries_bit_adjusted(CompressorSpec::quantizer(8), 10, 5) ==
        doctest::Approx(50.0 * 8 / 64));
}

TEST_CASE("contraction certification") {
  auto id = dmopt::verify_contractive(CompressorSpec::identity(), 10, 5, 100, 0);
  CHECK(id.max_ratio == 0.0);
  CHECK(id.violations == 0);

  auto tk = dmopt::verify_contractive(CompressorSpec::topk(0.4), 10, 5, 10000, 1);
  CHECK(tk.violations == 0);
  CHECK(tk.max_ratio <= 0.6);  // worst case is a uniform-magnitude column

  auto qz = dmopt::verify_contractive(CompressorSpec::quantizer(8), 10, 5, 10000, 2);
  CHECK(qz.violations == 0);
}

TEST_CASE("zero input compresses to zero with ratio zero by convention") {
  MatrixXd z = MatrixXd::Zero(4, 2);
  CHECK(dmopt::compress(CompressorSpec::topk(0.5), z) == z);
  CHECK(dmopt::compress(CompressorSpec::quantizer(4), z) == z);
}

TEST_CASE("non-finite input is rejected") {
  MatrixXd x = MatrixXd::Zero(2, 2);
  x(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(dmopt::compress(CompressorSpec::topk(0.5), x), dmopt::NumericalError);
}

TEST_CASE("compression is deterministic") {
  dmopt::Rng rng(33);
  MatrixXd x = rng.gaussian(12, 3);
  for (const auto& spec : {CompressorSpec::topk(0.25), CompressorSpec::quantizer(6)}) {
    MatrixXd a = dmopt::compress(spec, x);
    MatrixXd b = dmopt::compress(spec, x);
    CHECK(a == b);
  }
}

TEST_CASE("quantizer satisfies its declared contract on structured inputs") {
  // near-uniform columns stress the rounding bound
  auto spec = CompressorSpec::quantizer(3);
  dmopt::Rng rng(34);
  const double allowed = 1.0 - spec.alpha_for(8);
  for (int trial = 0; trial < 2000; ++trial) {
    MatrixXd x = MatrixXd::Ones(8, 2) + 0.45 * rng.gaussian(8, 2);
    const double ratio = (dmopt::compress(spec, x) - x).squaredNorm() / x.squaredNorm();
    CHECK(ratio <= allowed + 1e-12);
  }
}
