// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "esbm/checks.hpp"
#include "esbm/dynamics.hpp"
#include "esbm/error.hpp"
#include "esbm/objective.hpp"
#include "support.hpp"

using namespace esbm;
using namespace esbm::obj;

namespace {

dyn::Trajectory hand_trajectory() {
  dyn::Trajectory t;
  t.n = 1;
  t.d = 1;
  t.K = 2;
  t.dt = 0.5;
  t.R = Mat::Zero(3, 1);
  t.V = Mat::Zero(3, 1);
  t.noise = Mat(2, 1);
  t.noise << 0.1, -0.2;
  t.behavior_bias = Mat(2, 1);
  t.behavior_bias << 1.0, 2.0;
  t.sigma = Mat::Ones(2, 1);
  t.target.R_B = Mat::Zero(1, 1);
  return t;
}

std::vector<dyn::Trajectory> random_batch(const bias::BiasNetwork& net, std::size_t count, std::uint64_t seed) {
  const energy::Potential pot = energy::Potential::double_well();
  dyn::DynamicsParams p;
  p.K = 12;
  p.dt = 0.02;
  p.tau_start = p.tau_end = 0.3;
  std::mt19937_64 rng(seed);
  std::vector<dyn::Trajectory> out;
  for (std::size_t m = 0; m < count; ++m) {
    SystemState s = testing::random_state(net.config().n, net.config().d, rng);
    s.V.resize(0, 0);
    TargetSpec tg;
    tg.R_B = testing::random_mat(static_cast<Eigen::Index>(net.config().n), static_cast<Eigen::Index>(net.config().d), rng);
    tg.sigma = 0.5;
    out.push_back(dyn::rollout_one(&net, s, tg, rng(), p, pot));
  }
  return out;
}

}  // namespace

TEST_CASE("terminal reward is a Gaussian log kernel") {
  Mat R(1, 2);
  R << 1.0, 1.0;
  TargetSpec t;
  t.R_B = Mat::Zero(1, 2);
  t.sigma = 0.5;
  CHECK(terminal_reward(R, t) == doctest::Approx(-4.0));
  t.sigma = 0.0;
  CHECK_THROWS_AS(terminal_reward(R, t), InputError);
}

TEST_CASE("F_hat on a hand-computed path") {
  const dyn::Trajectory t = hand_trajectory();
  Mat b(2, 1);
  b << 3.0, -1.0;
  // 0.5 * (9 + 1) * 0.5 - (3 * 1 - 1 * 2) * 0.5 - (3 * 0.1 + 0.2)
  CHECK(f_hat(t, b) == doctest::Approx(1.5));
}

TEST_CASE("softmax survives extreme logits and is shift invariant") {
  const std::vector<double> a = softmax(std::vector<double>{1000.0, 1001.0, -1e308});
  const std::vector<double> b = softmax(std::vector<double>{0.0, 1.0, -std::numeric_limits<double>::infinity()});
  CHECK(a[0] == doctest::Approx(b[0]));
  CHECK(a[1] == doctest::Approx(b[1]));
  CHECK(a[2] == 0.0);
  CHECK(a[0] + a[1] == doctest::Approx(1.0));
}

TEST_CASE("objective names") {
  CHECK(parse_objective("ce") == Objective::CrossEntropy);
  CHECK(parse_objective("lv") == Objective::LogVariance);
  CHECK_THROWS_AS(parse_objective("kl"), InputError);
}

TEST_CASE("graph losses agree with the direct formulas") {
  std::mt19937_64 rng(1);
  bias::BiasNetwork net(testing::small_net(2, 2), 4);
  testing::perturb(net, rng, 0.3);
  const auto batch = random_batch(net, 5, 2);
  testing::perturb(net, rng, 0.3);
  std::vector<const dyn::Trajectory*> ptrs;
  std::vector<PathScore> scores;
  std::vector<double> rewards;
  for (const auto& t : batch) {
    ptrs.push_back(&t);
    scores.push_back(score(t));
    rewards.push_back(t.reward);
  }

  LossGraph ce(net.config(), Objective::CrossEntropy);
  const LossResult rc = ce.run(net, ptrs, 0.0);
  CHECK(rc.loss == doctest::Approx(ce_loss(rc.f_hat, batch_weights(scores))).epsilon(1e-12));

  LossGraph lv(net.config(), Objective::LogVariance);
  const double w = -0.7;
  const LossResult rl = lv.run(net, ptrs, w);
  CHECK(rl.loss == doctest::Approx(lv_loss(rl.f_hat, rewards, w)).epsilon(1e-12));
  // d/dw mean((F + r - w)^2) = -2 mean(F + r - w)
  double mean = 0.0;
  for (std::size_t k = 0; k < rewards.size(); ++k) mean += rl.f_hat[k] + rewards[k] - w;
  mean /= static_cast<double>(rewards.size());
  CHECK(rl.grads.at("lv.w").item() == doctest::Approx(-2.0 * mean).epsilon(1e-10));
}

TEST_CASE("F_hat at the behaviour control is minus the log ratio") {
  std::mt19937_64 rng(3);
  bias::BiasNetwork net(testing::small_net(1, 2), 6);
  testing::perturb(net, rng, 0.3);
  for (const auto& t : random_batch(net, 10, 4)) {
    CHECK(f_hat(t, t.behavior_bias) == doctest::Approx(t.log_p0 - t.log_pb).epsilon(1e-12));
  }
}

TEST_CASE("cross-entropy identity against recomputed densities") {
  const auto r = checks::ce_identity(30, 6);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("loss graph rejects mixed shapes") {
  bias::BiasNetwork net(testing::small_net(1, 2), 6);
  bias::BiasNetwork other(testing::small_net(2, 2), 6);
  const auto a = random_batch(net, 1, 1);
  const auto b = random_batch(other, 1, 1);
  std::vector<const dyn::Trajectory*> ptrs{&a[0], &b[0]};
  LossGraph ce(net.config(), Objective::CrossEntropy);
  CHECK_THROWS_AS(ce.run(net, ptrs, 0.0), ShapeError);
}
