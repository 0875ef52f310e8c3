// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "esbm/checks.hpp"
#include "esbm/error.hpp"
#include "esbm/metrics.hpp"
#include "support.hpp"

using namespace esbm;
using namespace esbm::metrics;

namespace {
const std::vector<double> kBandwidths{0.01, 0.1, 1.0, 10.0, 100.0};
}

TEST_CASE("MMD reference values") {
  Mat x(1, 1), y(1, 1);
  x << 0.0;
  y << 1.0;
  CHECK(rbf_mmd(x, y, std::vector<double>{1.0}) == doctest::Approx(0.7869386805747332).epsilon(1e-14));
  CHECK(rbf_mmd(x, y, kBandwidths) == doctest::Approx(0.959402743937882).epsilon(1e-14));
  Mat X(3, 2), Y(3, 2);
  X << 0, 0, 1, 0.5, -0.3, 2;
  Y << 0.2, -0.1, 1.5, 0.5, 0, 1;
  CHECK(rbf_mmd(X, Y, kBandwidths) == doctest::Approx(0.2790889670979535).epsilon(1e-13));
}

TEST_CASE("MMD grows toward 2 as clusters separate") {
  std::mt19937_64 rng(1);
  const Mat A = testing::random_mat(20, 2, rng, 0.1);
  double last = 0.0;
  for (double shift : {1.0, 10.0, 100.0, 1000.0, 10000.0}) {
    const Mat B = A.array() + shift;
    const double v = rbf_mmd(A, B, std::vector<double>{1.0});
    CHECK(v >= last - 1e-12);
    last = v;
  }
  // far apart, the cross term vanishes and only the two self terms remain
  const std::vector<double> unit{1.0};
  double self = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.rows(); ++j) {
      const Vec a = A.row(i).transpose(), b = A.row(j).transpose();
      self += mixture_kernel({a.data(), static_cast<std::size_t>(a.size())}, {b.data(), static_cast<std::size_t>(b.size())}, unit);
    }
  }
  self /= static_cast<double>(A.rows() * A.rows());
  CHECK(last == doctest::Approx(2.0 * self).epsilon(1e-12));
}

TEST_CASE("MMD of empty sets is an error") {
  Mat e(0, 2);
  CHECK_THROWS(rbf_mmd(e, e, kBandwidths));
}

TEST_CASE("Wasserstein reference values") {
  Mat X(4, 2), Y(4, 2);
  X << 0, 0, 1, 0, 2, 1, 0.5, 3;
  Y << 0, 1, 1, 1, 3, 0, 0, -2;
  CHECK(wasserstein(X, Y, 1) == doctest::Approx(1.6189415937954812).epsilon(1e-14));
  CHECK(wasserstein(X, Y, 2) == doctest::Approx(1.6770509831248424).epsilon(1e-14));
  Mat A(2, 2), B(2, 2);
  A << 0, 0, 1, 0;
  B << 0, 1, 1, 1;
  CHECK(wasserstein(A, B, 1) == doctest::Approx(1.0));
  CHECK(wasserstein(A, B, 2) == doctest::Approx(1.0));
}

TEST_CASE("Wasserstein on leading coordinates only") {
  Mat A(1, 3), B(1, 3);
  A << 0, 0, 0;
  B << 3, 4, 100;
  CHECK(wasserstein(A, B, 1, 2) == doctest::Approx(5.0));
}

TEST_CASE("Wasserstein size limit") {
  const Mat big = Mat::Zero(static_cast<Eigen::Index>(kMaxAssignment) + 1, 2);
  CHECK_THROWS_AS(wasserstein(big, big, 1), InputError);
}

TEST_CASE("metric oracles: exhaustive assignment and identities") {
  const auto r = checks::metric_oracles(200, 2);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("equalize leaves a set at the common size untouched") {
  std::mt19937_64 rng(3);
  const Mat X = testing::random_mat(10, 2, rng);
  const Mat Y = testing::random_mat(40, 2, rng);
  const auto [a, b] = equalize(X, Y, 512, rng);
  CHECK(a == X);
  CHECK(b.rows() == 10);
  const auto [c, d] = equalize(X, X, 512, rng);
  CHECK(rbf_mmd(c, d, kBandwidths) == 0.0);
}

TEST_CASE("RMSD") {
  std::mt19937_64 rng(4);
  const Mat R = testing::random_mat(5, 3, rng);
  CHECK(rmsd(R, R) < 1e-12);
  Eigen::Matrix3d q = Eigen::AngleAxisd(0.9, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  const Mat rotated = R * q.transpose();
  CHECK(rmsd(rotated, R) < 1e-10);
  Mat a(2, 2), b(2, 2);
  a << 0, 0, 1, 0;
  b << 0, 0, 2, 0;
  // after centring, the residuals are 0.5 on each point
  CHECK(rmsd(a, b) == doctest::Approx(0.5));
  CHECK(rmsd(a, b, {}, false) == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("RMSD is invariant under a common rigid motion") {
  std::mt19937_64 rng(5);
  const Mat R = testing::random_mat(6, 3, rng), S = testing::random_mat(6, 3, rng);
  Eigen::Matrix3d q = Eigen::AngleAxisd(2.1, Eigen::Vector3d(0, 1, 1).normalized()).toRotationMatrix();
  const Eigen::RowVector3d t(3, -1, 2);
  const Mat R2 = (R * q.transpose()).rowwise() + t;
  const Mat S2 = (S * q.transpose()).rowwise() + t;
  CHECK(rmsd(R2, S2) == doctest::Approx(rmsd(R, S)).epsilon(1e-10));
  CHECK(rmsd(R2, S2, {}, false) == doctest::Approx(rmsd(R, S, {}, false)).epsilon(1e-10));
}

TEST_CASE("THP counts endpoints inside the radius") {
  Mat target = Mat::Zero(1, 2);
  std::vector<Mat> ends, targets(4, target);
  for (double x : {0.1, 0.5, 0.7, 2.0}) {
    Mat e(1, 2);
    e << x, 0.0;
    ends.push_back(e);
  }
  MetricsConfig c;
  CHECK(thp(ends, targets, c) == doctest::Approx(75.0));
  std::vector<Mat> at(4, target);
  CHECK(thp(at, targets, c) == 100.0);
  c.thp_radius = 0.01;
  CHECK(thp(std::vector<Mat>(ends.begin() + 1, ends.end()), std::vector<Mat>(3, target), c) == 0.0);
}

TEST_CASE("THP on a coordinate subset") {
  Mat e(1, 2), t = Mat::Zero(1, 2);
  e << 0.1, 5.0;
  MetricsConfig c;
  c.cv = {0};
  CHECK(thp(std::vector<Mat>{e}, std::vector<Mat>{t}, c) == 100.0);
}

TEST_CASE("ETS is the path maximum for hits only") {
  dyn::Trajectory t;
  t.n = 1;
  t.d = 2;
  t.K = 2;
  t.R = Mat(3, 2);
  t.R << -1, 0, 0, std::sqrt(8.0), 1, 2;
  const energy::Potential dw = energy::Potential::double_well();
  // energies along the path: 0, 5, 2
  CHECK(ets(t, dw, true).value() == doctest::Approx(5.0));
  CHECK_FALSE(ets(t, dw, false).has_value());
}

TEST_CASE("summary uses the sample standard deviation") {
  const Summary s = summarize(std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
}
