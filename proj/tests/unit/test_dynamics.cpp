// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "esbm/checks.hpp"
#include "esbm/dynamics.hpp"
#include "esbm/error.hpp"
#include "support.hpp"

using namespace esbm;
using namespace esbm::dyn;

namespace {

DynamicsParams params(Mode mode, std::size_t K = 20) {
  DynamicsParams p;
  p.mode = mode;
  p.gamma = 2.0;
  p.tau_start = 0.5;
  p.tau_end = 0.2;
  p.dt = 0.01;
  p.K = K;
  return p;
}

SystemState start_state(std::size_t n, std::size_t d) {
  SystemState s;
  s.R = Mat::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d), -1.0);
  return s;
}

TargetSpec target(std::size_t n, std::size_t d) {
  TargetSpec t;
  t.R_B = Mat::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d), 1.0);
  return t;
}

}  // namespace

TEST_CASE("transition log density reference value") {
  Mat x(1, 2), mean = Mat::Zero(1, 2);
  x << 0.1, -0.2;
  CHECK(transition_logdensity(x, mean, 0.5, 0.04) == doctest::Approx(0.26729311957874546).epsilon(1e-14));
  Vec s(1);
  s << 0.5;
  CHECK(transition_logdensity(x, mean, s, 0.04) == doctest::Approx(0.26729311957874546).epsilon(1e-14));
}

TEST_CASE("diffusion scales") {
  DynamicsParams p = params(Mode::Overdamped);
  p.tau_start = p.tau_end = 0.5;
  CHECK(p.sigma(0, 0) == doctest::Approx(std::sqrt(2.0 * 0.5 / 2.0)));
  p.mode = Mode::Underdamped;
  p.masses = Vec::Constant(2, 4.0);
  CHECK(p.sigma(0, 1) == doctest::Approx(std::sqrt(2.0 * 2.0 * 0.5 / 4.0)));
}

TEST_CASE("temperature anneals linearly from start to end") {
  const DynamicsParams p = params(Mode::Overdamped, 11);
  CHECK(p.tau(0) == 0.5);
  CHECK(p.tau(10) == doctest::Approx(0.2));
  CHECK(p.tau(5) == doctest::Approx(0.35));
}

TEST_CASE("invalid parameters are rejected") {
  DynamicsParams p = params(Mode::Overdamped);
  p.dt = -1.0;
  CHECK_THROWS_AS(p.validate(1), InputError);
  p = params(Mode::Underdamped);
  p.masses = Vec::Constant(3, 1.0);
  CHECK_THROWS_AS(p.validate(2), InputError);
}

TEST_CASE("zero noise and zero control follow the drift") {
  const energy::Potential pot = energy::Potential::double_well();
  const DynamicsParams p = params(Mode::Overdamped);
  SystemState s;
  s.R = Mat(1, 2);
  s.R << 0.5, 0.3;
  const Mat f = drift(pot, s.R, p);
  // -grad U / gamma with U = (x^2 - 1)^2 + y^2 / 2
  CHECK(f(0, 0) == doctest::Approx(-4.0 * 0.5 * (0.25 - 1.0) / 2.0));
  CHECK(f(0, 1) == doctest::Approx(-0.3 / 2.0));
  const SystemState next = step(s, f, Mat::Zero(1, 2), p, 0, Mat::Zero(1, 2));
  CHECK(next.R(0, 0) == doctest::Approx(0.5 + f(0, 0) * p.dt));
}

TEST_CASE("rollouts are reproducible and chunk-independent") {
  const energy::Potential pot = energy::Potential::double_well();
  const bias::BiasNetwork net(testing::small_net(2, 2), 3);
  std::vector<SystemState> init(40, start_state(2, 2));
  std::vector<TargetSpec> tg(40, target(2, 2));
  std::vector<std::uint64_t> seeds(40);
  for (std::size_t k = 0; k < seeds.size(); ++k) seeds[k] = 100 + k;
  const DynamicsParams p = params(Mode::Underdamped);
  RolloutOptions a, b;
  a.chunk = 32;
  b.chunk = 7;
  const auto first = rollout(&net, init, tg, seeds, p, pot, a);
  const auto second = rollout(&net, init, tg, seeds, p, pot, b);
  for (std::size_t m = 0; m < first.size(); ++m) {
    CHECK(first[m].R == second[m].R);
    CHECK(first[m].log_pb == second[m].log_pb);
  }
  const Trajectory single = rollout_one(&net, init[5], tg[5], seeds[5], p, pot);
  CHECK(single.R == first[5].R);
}

TEST_CASE("untrained network equals the matched analytic control") {
  const energy::Potential pot = energy::Potential::double_well();
  const bias::BiasNetwork net(testing::small_net(1, 2), 5);
  const TargetSpec tg = target(1, 2);
  for (Mode mode : {Mode::Overdamped, Mode::Underdamped}) {
    const DynamicsParams p = params(mode, 30);
    const Trajectory viaNet = rollout_one(&net, start_state(1, 2), tg, 77, p, pot);
    const ControlFn analytic = [&](const SystemState& s, std::size_t) {
      const Eigen::RowVectorXd dir = (tg.R_B.row(0) - s.R.row(0)).normalized();
      return Mat((std::numbers::ln2 + bias::kAlphaFloor) * dir);
    };
    const Trajectory viaFn = rollout_with_control(analytic, start_state(1, 2), tg, 77, p, pot);
    CHECK((viaNet.R - viaFn.R).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("stored path reconstructs from increments") {
  const energy::Potential pot = energy::Potential::muller_brown();
  std::mt19937_64 rng(2);
  bias::BiasNetwork net(testing::small_net(2, 2), 1);
  testing::perturb(net, rng);
  for (Mode mode : {Mode::Overdamped, Mode::Underdamped}) {
    DynamicsParams p = params(mode);
    p.dt = 1e-4;
    SystemState s;
    s.R = Mat(2, 2);
    s.R << -0.5, 1.4, 0.6, 0.0;
    TargetSpec tg;
    tg.R_B = Mat(2, 2);
    tg.R_B << 0.6, 0.0, -0.5, 1.4;
    const Trajectory t = rollout_one(&net, s, tg, 9, p, pot);
    CHECK(t.valid());
    CHECK(reconstruction_error(t, p, pot) < 1e-12);
  }
}

TEST_CASE("girsanov identity on random rollouts") {
  const auto r = checks::girsanov(30, 4);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("base dynamics have zero log ratio") {
  const energy::Potential pot = energy::Potential::double_well();
  const Trajectory t = rollout_one(nullptr, start_state(1, 2), target(1, 2), 3, params(Mode::Overdamped), pot);
  CHECK(t.log_pb == t.log_p0);
  CHECK(t.behavior_bias.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shape mismatches are rejected") {
  const energy::Potential pot = energy::Potential::muller_brown();
  CHECK_THROWS_AS(rollout_one(nullptr, start_state(1, 3), target(1, 3), 1, params(Mode::Overdamped), pot), ShapeError);
  CHECK_THROWS_AS(rollout_one(nullptr, start_state(2, 2), target(1, 2), 1, params(Mode::Overdamped), pot), ShapeError);
}

TEST_CASE("trajectory csv round trip") {
  const energy::Potential pot = energy::Potential::double_well();
  const Trajectory t = rollout_one(nullptr, start_state(2, 3), target(2, 3), 3, params(Mode::Underdamped, 5), pot);
  const auto dir = testing::scratch("traj");
  write_trajectory_csv(dir / "t.csv", t);
  const auto states = read_trajectory_csv(dir / "t.csv");
  REQUIRE(states.size() == 6);
  for (std::size_t k = 0; k < states.size(); ++k) {
    CHECK(states[k].R == t.positions(k));
    CHECK(states[k].V == t.state(k).V);
  }
}
