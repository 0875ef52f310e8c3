// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "esbm/buffer.hpp"
#include "esbm/error.hpp"
#include "support.hpp"

using namespace esbm;
using buffer::ReplayBuffer;

namespace {

dyn::Trajectory make(std::uint64_t seed) {
  const energy::Potential pot = energy::Potential::double_well();
  dyn::DynamicsParams p;
  p.K = 5;
  p.mode = dyn::Mode::Underdamped;
  SystemState s;
  s.R = Mat::Constant(2, 2, -1.0);
  TargetSpec t;
  t.R_B = Mat::Constant(2, 2, 1.0);
  const bias::BiasNetwork net(testing::small_net(2, 2), seed);
  return dyn::rollout_one(&net, s, t, seed, p, pot);
}

}  // namespace

TEST_CASE("buffer keeps the newest entries up to capacity") {
  ReplayBuffer buf(3);
  for (std::uint64_t k = 0; k < 5; ++k) buf.push(make(k));
  CHECK(buf.size() == 3);
  CHECK(buf.inserted() == 5);
  CHECK(buf[0].serial == 2);
  CHECK(buf[2].serial == 4);
}

TEST_CASE("sampling probabilities are the softmax of log weights") {
  ReplayBuffer buf(10);
  obj::PathScore a, b;
  a.log_weight = 0.0;
  b.log_weight = std::log(3.0);
  buf.push(make(1), a);
  buf.push(make(2), b);
  const std::vector<double> p = buf.probabilities();
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[1] == doctest::Approx(0.75));
  std::mt19937_64 rng(4);
  const auto idx = buf.sample_indices(20000, rng);
  double ones = 0.0;
  for (std::size_t i : idx) ones += static_cast<double>(i);
  CHECK(ones / 20000.0 == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("sampling an empty buffer is a state error") {
  ReplayBuffer buf(2);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(buf.sample(1, rng), StateError);
}

TEST_CASE("invalid trajectories are refused") {
  ReplayBuffer buf(2);
  dyn::Trajectory t = make(1);
  t.R(2, 0) = std::nan("");
  CHECK_THROWS(buf.push(t));
  CHECK(buf.empty());
  CHECK_THROWS_AS(ReplayBuffer(0), InputError);
}

TEST_CASE("buffer save and load round trip") {
  ReplayBuffer buf(4);
  for (std::uint64_t k = 0; k < 3; ++k) buf.push(make(10 + k));
  const auto dir = testing::scratch("buffer");
  buf.save(dir);
  const ReplayBuffer back = ReplayBuffer::load(dir);
  REQUIRE(back.size() == 3);
  CHECK(back.capacity() == 4);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].trajectory.R == buf[i].trajectory.R);
    CHECK(back[i].trajectory.noise == buf[i].trajectory.noise);
    CHECK(back[i].trajectory.behavior_bias == buf[i].trajectory.behavior_bias);
    CHECK(back[i].score.log_weight == buf[i].score.log_weight);
    CHECK(back[i].serial == buf[i].serial);
  }
}
