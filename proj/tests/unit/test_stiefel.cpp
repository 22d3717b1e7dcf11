#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "dmopt/stiefel.hpp"
#include "test_helpers.hpp"

using dmopt::Rng;
using dmopt::StiefelPointXd;
using Eigen::MatrixXd;

TEST_CASE("polar projection is the identity on the manifold") {
  Rng rng(11);
  MatrixXd q = testutil::qr_orthonormal(6, 3, rng);
  auto p = dmopt::polar_project(q);
  CHECK((p.matrix() - q).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("positive scaling shares the polar factor") {
  Rng rng(12);
  MatrixXd q = testutil::qr_orthonormal(5, 2, rng);
  auto p = dmopt::polar_project((3.0 * q).eval());
  CHECK((p.matrix() - q).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("polar factor is the nearest point among random manifold samples") {
  Rng rng(13);
  MatrixXd y = rng.gaussian(4, 2);
  auto p = dmopt::polar_project(y);
  const double dp = (p.matrix() - y).norm();
  for (int trial = 0; trial < 10000; ++trial) {
    MatrixXd s = testutil::qr_orthonormal(4, 2, rng);
    CHECK(dp <= (s - y).norm() + 1e-12);
  }
}

TEST_CASE("rank-deficient input is rejected") {
  MatrixXd y = MatrixXd::Zero(4, 2);
  y.col(0).setOnes();  // second column zero -> no unique polar factor
  CHECK_THROWS_AS(dmopt::polar_project(y), dmopt::NumericalError);
}

TEST_CASE("projection is idempotent") {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    MatrixXd y = rng.gaussian(7, 3);
    auto p1 = dmopt::polar_project(y);
    auto p2 = dmopt::polar_project((p1.matrix() * 1.0).eval());
    CHECK((p1.matrix() - p2.matrix()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("tangent projection: hand-computed 3x1 case") {
  MatrixXd x(3, 1);
  x << 1, 0, 0;
  MatrixXd v = MatrixXd::Ones(3, 1);
  MatrixXd t = dmopt::tangent_project(x, v);
  CHECK(t(0, 0) == 0.0);
  CHECK(t(1, 0) == doctest::Approx(1.0));
  CHECK(t(2, 0) == doctest::Approx(1.0));
}

TEST_CASE("tangent projection annihilates the base point and is idempotent") {
  Rng rng(15);
  MatrixXd x = testutil::qr_orthonormal(6, 2, rng);
  CHECK(dmopt::tangent_project(x, x).norm() < 1e-14);
  MatrixXd v = rng.gaussian(6, 2);
  MatrixXd t1 = dmopt::tangent_project(x, v);
  MatrixXd t2 = dmopt::tangent_project(x, t1);
  CHECK((t1 - t2).cwiseAbs().maxCoeff() < 1e-13);
}

// Independent oracle: expand the tangent space at x in an explicit orthonormal
// basis { x (E_ij - E_ji)/sqrt(2) } u { x_perp E_kl } and project v by inner
// products. Must agree with the closed-form projector.
TEST_CASE("tangent projection matches least-squares projection onto a tangent basis") {
  Rng rng(16);
  const int d = 4, r = 2;
  MatrixXd x = testutil::qr_orthonormal(d, r, rng);
  MatrixXd xp = testutil::qr_complement(x);

  std::vector<MatrixXd> basis;
  for (int i = 0; i < r; ++i)
    for (int j = i + 1; j < r; ++j) {
      MatrixXd om = MatrixXd::Zero(r, r);
      om(i, j) = 1.0 / std::sqrt(2.0);
      om(j, i) = -1.0 / std::sqrt(2.0);
      basis.push_back(x * om);
    }
  for (int k = 0; k < d - r; ++k)
    for (int l = 0; l < r; ++l) {
      MatrixXd e = MatrixXd::Zero(d - r, r);
      e(k, l) = 1.0;
      basis.push_back(xp * e);
    }

  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd v = rng.gaussian(d, r);
    MatrixXd expected = MatrixXd::Zero(d, r);
    for (const auto& b : basis) expected += (b.array() * v.array()).sum() * b;
    MatrixXd got = dmopt::tangent_project(x, v);
    CHECK((expected - got).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("tangent projection is self-adjoint") {
  Rng rng(17);
  MatrixXd x = testutil::qr_orthonormal(8, 3, rng);
  for (int trial = 0; trial < 200; ++trial) {
    MatrixXd u = rng.gaussian(8, 3);
    MatrixXd v = rng.gaussian(8, 3);
    const double lhs = (dmopt::tangent_project(x, u).array() * v.array()).sum();
    const double rhs = (u.array() * dmopt::tangent_project(x, v).array()).sum();
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("retraction at zero is the identity") {
  Rng rng(18);
  StiefelPointXd x(testutil::qr_orthonormal(5, 2, rng));
  auto y = dmopt::retract_polar(x, MatrixXd::Zero(5, 2).eval());
  CHECK((y.matrix() - x.matrix()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("retraction of a 2x1 frame has the closed form (1,a)/sqrt(1+a^2)") {
  MatrixXd xm(2, 1);
  xm << 1, 0;
  StiefelPointXd x(xm);
  const double a = 0.37;
  MatrixXd xi(2, 1);
  xi << 0, a;
  auto y = dmopt::retract_polar(x, xi);
  const double s = std::sqrt(1.0 + a * a);
  CHECK(y.matrix()(0, 0) == doctest::Approx(1.0 / s).epsilon(1e-14));
  CHECK(y.matrix()(1, 0) == doctest::Approx(a / s).epsilon(1e-14));
}

TEST_CASE("retraction agrees with x + t*xi to first order") {
  Rng rng(19);
  StiefelPointXd x(testutil::qr_orthonormal(6, 3, rng));
  MatrixXd xi = dmopt::tangent_project(x.matrix(), rng.gaussian(6, 3));
  xi /= xi.norm();
  double prev_ratio = 0.0;
  for (double t : {1e-2, 1e-3, 1e-4}) {
    auto y = dmopt::retract_polar(x, (t * xi).eval());
    const double ratio = (y.matrix() - x.matrix() - t * xi).norm() / (t * t);
    CHECK(ratio < 5.0);  // second-order coefficient stays O(1)
    if (prev_ratio > 0) CHECK(ratio < prev_ratio * 1.5 + 1e-6);
    prev_ratio = ratio;
  }
}

TEST_CASE("distance to the manifold") {
  Rng rng(20);
  MatrixXd q = testutil::qr_orthonormal(6, 2, rng);
  CHECK(dmopt::dist_to_manifold(q) < 1e-13);

  MatrixXd u = testutil::qr_orthonormal(5, 1, rng);
  CHECK(dmopt::dist_to_manifold((2.0 * u).eval()) == doctest::Approx(1.0).epsilon(1e-12));

  MatrixXd y = rng.gaussian(5, 2);
  const double dist = dmopt::dist_to_manifold(y);
  for (int trial = 0; trial < 2000; ++trial) {
    MatrixXd s = testutil::qr_orthonormal(5, 2, rng);
    CHECK(dist <= (y - s).norm() + 1e-12);
  }
}

TEST_CASE("procrustes distance: zero cases and orthogonal invariance") {
  Rng rng(21);
  StiefelPointXd x(testutil::qr_orthonormal(7, 3, rng));
  CHECK(dmopt::procrustes_distance(x, x) < 1e-12);

  MatrixXd qsmall = testutil::qr_orthonormal(3, 3, rng);
  StiefelPointXd xq((x.matrix() * qsmall).eval());
  CHECK(dmopt::procrustes_distance(x, xq) < 1e-10);
  CHECK(dmopt::procrustes_distance(xq, x) < 1e-10);
}

TEST_CASE("procrustes distance matches the sign-exhaustive oracle for r=1") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    StiefelPointXd x(testutil::qr_orthonormal(6, 1, rng));
    StiefelPointXd y(testutil::qr_orthonormal(6, 1, rng));
    const double brute = std::min((x.matrix() - y.matrix()).norm(),
                                  (-x.matrix() - y.matrix()).norm());
    CHECK(dmopt::procrustes_distance(x, y) == doctest::Approx(brute).epsilon(1e-10));
  }
}

TEST_CASE("procrustes distance satisfies the triangle inequality on samples") {
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    StiefelPointXd a(testutil::qr_orthonormal(5, 2, rng));
    StiefelPointXd b(testutil::qr_orthonormal(5, 2, rng));
    StiefelPointXd c(testutil::qr_orthonormal(5, 2, rng));
    CHECK(dmopt::procrustes_distance(a, c) <=
          dmopt::procrustes_distance(a, b) + dmopt::procrustes_distance(b, c) + 1e-9);
  }
}

TEST_CASE("constant estimation is finite and monotone under sample refinement") {
  auto sc1 = dmopt::estimate_constants(10, 5, 1000, 0);
  CHECK(sc1.R == 1.0);
  CHECK(sc1.Q > 0.0);
  CHECK(std::isfinite(sc1.Q));
  CHECK(std::isfinite(sc1.M1));
  CHECK(std::isfinite(sc1.M2));
  auto sc2 = dmopt::estimate_constants(10, 5, 2000, 0);
  CHECK(sc2.Q >= sc1.Q - 1e-12);
  CHECK(sc2.M1 >= sc1.M1 - 1e-12);
  CHECK(sc2.M2 >= sc1.M2 - 1e-12);
  CHECK_THROWS_AS(dmopt::estimate_constants(10, 5, 99, 0), dmopt::ConfigError);
}

TEST_CASE("type invariants are enforced at construction") {
  MatrixXd bad = MatrixXd::Ones(4, 2);
  CHECK_THROWS_AS(StiefelPointXd{bad}, dmopt::NumericalError);

  Rng rng(24);
  StiefelPointXd x(testutil::qr_orthonormal(4, 2, rng));
  CHECK_THROWS_AS(dmopt::TangentVectorXd(x, x.matrix()), dmopt::NumericalError);
  dmopt::TangentVectorXd ok(x, dmopt::tangent_project(x.matrix(), rng.gaussian(4, 2)));
  CHECK(ok.matrix().rows() == 4);
}
