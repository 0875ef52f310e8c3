// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "esbm/error.hpp"
#include "esbm/trainer.hpp"
#include "support.hpp"

using namespace esbm;
using namespace esbm::train;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.n_rollouts = 2;
  c.n_epochs = 3;
  c.M = 8;
  c.batch_size = 4;
  c.buffer_capacity = 64;
  c.K = 20;
  c.n = 1;
  c.d = 2;
  c.hidden = 8;
  c.layers = 1;
  c.heads = 2;
  c.ff = 16;
  c.dropout = 0.1;
  c.lr = 1e-3;
  c.tau_start = 0.1;
  c.tau_end = 0.1;
  return c;
}

TrainInputs well_inputs() {
  TrainInputs in{Mat(1, 2), Mat(1, 2), energy::Potential::double_well()};
  in.initial << -1.0, 0.0;
  in.target << 1.0, 0.0;
  return in;
}

std::vector<double> smooth(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out;
  for (std::size_t i = 0; i + window <= v.size(); ++i) {
    out.push_back(std::accumulate(v.begin() + static_cast<long>(i), v.begin() + static_cast<long>(i + window), 0.0) /
                  static_cast<double>(window));
  }
  return out;
}

}  // namespace

TEST_CASE("config text parsing") {
  const TrainConfig c = parse_config("# comment\nM = 12\n  lr=3e-4  # trailing\nmode = underdamped\n\nmd_mode = true\n");
  CHECK(c.M == 12);
  CHECK(c.lr == 3e-4);
  CHECK(c.mode == "underdamped");
  CHECK(c.md_mode);
  CHECK(c.K == TrainConfig{}.K);
}

TEST_CASE("unknown config key is named in the error") {
  try {
    parse_config("n_epoch = 3\n");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("n_epoch") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("lr = fast\n"), InputError);
  CHECK_THROWS_AS(parse_config("lr\n"), InputError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.M = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = TrainConfig{};
  c.sigma = -1.0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = TrainConfig{};
  c.sampling = "random";
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("canonical config text round trips") {
  TrainConfig c = tiny_config();
  c.lr = 1.0 / 3.0;
  c.objective = "lv";
  c.manifold_path = "m.ckpt";
  const TrainConfig back = parse_config(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.lr == c.lr);
  const std::string text = c.to_text();
  CHECK(config_keys().size() == static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST_CASE("nearest-neighbour clusters") {
  Mat cloud(5, 1);
  cloud << 0.0, 10.0, 1.0, 3.0, -1.5;
  const Mat c = nn_cluster(cloud, 0, 3);
  REQUIRE(c.rows() == 3);
  CHECK(c(0, 0) == 0.0);
  CHECK(c(1, 0) == 1.0);
  CHECK(c(2, 0) == -1.5);
  CHECK_THROWS_AS(nn_cluster(cloud, 5, 1), InputError);
  CHECK_THROWS_AS(nn_cluster(cloud, 0, 6), InputError);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const TrainReport a = Trainer(tiny_config(), well_inputs()).run();
  const TrainReport b = Trainer(tiny_config(), well_inputs()).run();
  CHECK(a.loss == b.loss);
  CHECK(a.mean_reward == b.mean_reward);
  TrainConfig other = tiny_config();
  other.seed = 1;
  CHECK(Trainer(other, well_inputs()).run().loss != a.loss);
}

TEST_CASE("log-variance training runs and moves the control variate") {
  TrainConfig c = tiny_config();
  c.objective = "lv";
  Trainer t(c, well_inputs());
  const TrainReport r = t.run();
  CHECK(r.loss.size() == 2);
  CHECK(std::isfinite(t.lv_w()));
  CHECK(t.lv_w() != 0.0);
}

TEST_CASE("smoothed loss on a frozen buffer does not increase") {
  std::size_t good = 0;
  const std::size_t runs = 20;
  for (std::uint64_t seed = 0; seed < runs; ++seed) {
    TrainConfig c = tiny_config();
    c.seed = seed;
    c.M = 32;
    c.K = 50;
    c.batch_size = 32;
    c.n_epochs = 40;
    c.dropout = 0.0;
    Trainer t(c, well_inputs());
    for (auto& traj : t.rollout_phase(0)) t.replay().push(std::move(traj));
    const std::vector<double> s = smooth(t.train_phase(0), 5);
    bool rises = false;
    for (std::size_t i = 1; i < s.size(); ++i) rises = rises || s[i] > s[i - 1];
    if (!rises) ++good;
  }
  CHECK(10 * good >= 9 * runs);
}
