// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/LU>
#include <Eigen/QR>

#include "esbm/biasnet.hpp"
#include "esbm/checks.hpp"
#include "esbm/error.hpp"
#include "support.hpp"

using namespace esbm;
using namespace esbm::bias;

namespace {

Mat rotation2(double theta) {
  Mat r(2, 2);
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

Mat rotation3(std::mt19937_64& rng) {
  // QR of a Gaussian matrix, sign-fixed to det +1
  Eigen::Matrix3d g = testing::random_mat(3, 3, rng);
  Eigen::HouseholderQR<Eigen::Matrix3d> qr(g);
  Eigen::Matrix3d q = qr.householderQ();
  if (q.determinant() < 0) q.col(0) *= -1.0;
  return q;
}

}  // namespace

TEST_CASE("kabsch: identical sets align exactly") {
  std::mt19937_64 rng(1);
  const Mat R = testing::random_mat(5, 3, rng);
  const KabschResult k = kabsch_align(R, R);
  CHECK((k.rotation - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(k.translation.norm() < 1e-12);
  CHECK(k.rmsd < 1e-12);
}

TEST_CASE("kabsch recovers a rigid motion") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat ref = testing::random_mat(6, 3, rng);
    const Mat Q = rotation3(rng);
    const Eigen::RowVector3d shift(1.0, -2.0, 0.5);
    const Mat moved = (ref * Q.transpose()).rowwise() + shift;
    const KabschResult k = kabsch_align(moved, ref);
    CHECK(k.rmsd < 1e-10);
    CHECK(std::abs(Eigen::Matrix3d(k.rotation).determinant() - 1.0) < 1e-12);
    CHECK((k.aligned - ref).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("kabsch never returns a reflection") {
  Mat ref(4, 2);
  ref << 0, 0, 1, 0, 0, 2, 1, 2;
  Mat mirrored = ref;
  mirrored.col(0) *= -1.0;
  const KabschResult k = kabsch_align(mirrored, ref);
  CHECK(Eigen::Matrix2d(k.rotation).determinant() == doctest::Approx(1.0));
  CHECK(k.rmsd > 0.1);
}

TEST_CASE("kabsch rejects unsupported dimensions and collapsed sets") {
  Mat a = Mat::Zero(3, 4);
  CHECK_THROWS_AS(kabsch_align(a, a), ShapeError);
  Mat point = Mat::Zero(3, 3);
  CHECK_THROWS_AS(kabsch_align(point, point), NumericError);
}

TEST_CASE("assembled bias has magnitude alpha along s and keeps h's orthogonal part") {
  Vec alpha(1);
  alpha << 0.7;
  Mat h(1, 2), s(1, 2);
  h << 3.0, 4.0;
  s << 1.0, 0.0;
  const Mat b = assemble_bias(alpha, h, s);
  CHECK(b(0, 0) == doctest::Approx(0.7));
  CHECK(b(0, 1) == doctest::Approx(4.0));
}

TEST_CASE("features: position, velocity, offset to target, distance") {
  SystemState st;
  st.R = Mat::Zero(1, 2);
  st.V = Mat::Constant(1, 2, 5.0);
  TargetSpec tg;
  tg.R_B = Mat(1, 2);
  tg.R_B << 3.0, 4.0;
  const Mat f = build_features(st, tg, true);
  REQUIRE(f.cols() == 7);
  CHECK(f(0, 2) == 5.0);
  CHECK(f(0, 4) == 3.0);
  CHECK(f(0, 6) == 5.0);
  CHECK(build_features(st, tg, false)(0, 2) == 0.0);
}

TEST_CASE("untrained network gives (ln 2 + floor) along the target direction") {
  std::mt19937_64 rng(3);
  const NetConfig c = testing::small_net(3, 2);
  const BiasNetwork net(c, 17);
  const SystemState st = testing::random_state(3, 2, rng);
  TargetSpec tg;
  tg.R_B = testing::random_mat(3, 2, rng);
  const BiasOutput out = compute_bias(net, st, tg);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const Eigen::RowVectorXd dir = (tg.R_B.row(i) - st.R.row(i)).normalized();
    CHECK((out.b.row(i) - (std::numbers::ln2 + kAlphaFloor) * dir).norm() < 1e-12);
  }
}

TEST_CASE("coincident particles get zero bias") {
  std::mt19937_64 rng(4);
  const NetConfig c = testing::small_net(2, 3);
  BiasNetwork net(c, 1);
  testing::perturb(net, rng);
  const SystemState st = testing::random_state(2, 3, rng);
  TargetSpec tg;
  tg.R_B = testing::random_mat(2, 3, rng);
  tg.R_B.row(1) = st.R.row(1);
  const BiasOutput out = compute_bias(net, st, tg);
  CHECK(out.b.row(1).norm() == 0.0);
  CHECK(out.b.row(0).norm() > 0.0);
}

TEST_CASE("cone constraint on random draws") {
  const auto r = checks::cone_constraint(2000, 5);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("network gradients match finite differences") {
  const auto r = checks::gradcheck_network(5, 3);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("particles are exchangeable: permuting inputs permutes outputs") {
  std::mt19937_64 rng(6);
  const NetConfig c = testing::small_net(4, 2);
  BiasNetwork net(c, 2);
  testing::perturb(net, rng);
  const SystemState st = testing::random_state(4, 2, rng);
  TargetSpec tg;
  tg.R_B = testing::random_mat(4, 2, rng);
  const std::vector<Eigen::Index> perm{2, 0, 3, 1};
  SystemState ps = st;
  TargetSpec pt = tg;
  for (Eigen::Index i = 0; i < 4; ++i) {
    ps.R.row(i) = st.R.row(perm[i]);
    ps.V.row(i) = st.V.row(perm[i]);
    pt.R_B.row(i) = tg.R_B.row(perm[i]);
  }
  const Mat b = compute_bias(net, st, tg).b;
  const Mat pb = compute_bias(net, ps, pt).b;
  for (Eigen::Index i = 0; i < 4; ++i) CHECK((pb.row(i) - b.row(perm[i])).norm() < 1e-12);
}

TEST_CASE("MD mode: a rigid motion of the state rotates the bias with it") {
  std::mt19937_64 rng(7);
  NetConfig c = testing::small_net(4, 2);
  c.md_mode = true;
  BiasNetwork net(c, 3);
  testing::perturb(net, rng);
  const SystemState st = testing::random_state(4, 2, rng);
  TargetSpec tg;
  tg.R_B = testing::random_mat(4, 2, rng);
  const Mat Q = rotation2(0.83);
  SystemState moved = st;
  moved.R = (st.R * Q.transpose()).rowwise() + Eigen::RowVector2d(2.0, -1.0);
  moved.V = st.V * Q.transpose();
  const Mat b = compute_bias(net, st, tg).b;
  const Mat bm = compute_bias(net, moved, tg).b;
  CHECK((bm - b * Q.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("checkpoint round trip reproduces outputs") {
  std::mt19937_64 rng(8);
  NetConfig c = testing::small_net(3, 3);
  c.velocity_conditioning = false;
  BiasNetwork net(c, 9);
  testing::perturb(net, rng);
  const auto dir = testing::scratch("net");
  net.save(dir / "net.ckpt");
  const BiasNetwork back = BiasNetwork::load(dir / "net.ckpt");
  CHECK(back.config().velocity_conditioning == false);
  CHECK(back.config().hidden == c.hidden);
  const SystemState st = testing::random_state(3, 3, rng);
  TargetSpec tg;
  tg.R_B = testing::random_mat(3, 3, rng);
  const Mat a = compute_bias(net, st, tg).b;
  const Mat b = compute_bias(back, st, tg).b;
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("non-finite input is reported with the particle index") {
  const NetConfig c = testing::small_net(2, 2);
  const BiasNetwork net(c, 1);
  SystemState st;
  st.R = Mat::Zero(2, 2);
  st.V = Mat::Zero(2, 2);
  st.R(1, 0) = std::nan("");
  TargetSpec tg;
  tg.R_B = Mat::Ones(2, 2);
  try {
    compute_bias(net, st, tg);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    // attention spreads the NaN to every particle, so the first one is named
    CHECK(std::string(e.what()).find("particle 0") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  NetConfig c = testing::small_net(2, 2);
  c.heads = 3;  // does not divide hidden = 8
  CHECK_THROWS_AS(c.validate(), InputError);
}
