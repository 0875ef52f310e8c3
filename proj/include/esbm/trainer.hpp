// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "esbm/adam.hpp"
#include "esbm/biasnet.hpp"
#include "esbm/buffer.hpp"
#include "esbm/dynamics.hpp"
#include "esbm/energy.hpp"
#include "esbm/objective.hpp"

namespace esbm::train {

enum class Sampling { Fixed, Cluster };

struct TrainConfig {
  // outer loop
  std::size_t n_rollouts = 100;
  std::size_t n_epochs = 1000;
  std::size_t M = 64;
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 1000;
  // dynamics
  double dt = 0.01;
  std::size_t K = 100;
  std::size_t n = 16;
  std::size_t d = 2;
  double sigma = 0.1;
  double gamma = 2.0;
  double tau_start = 1.0;
  double tau_end = 1.0;
  std::string mode = "overdamped";
  // optimisation
  double lr = 1e-4;
  std::string objective = "ce";
  double grad_clip = 10.0;
  double lv_w_lr = 0.1;
  std::uint64_t seed = 0;
  // network
  bool velocity_conditioning = true;
  bool md_mode = false;
  std::size_t hidden = 256;
  std::size_t layers = 4;
  std::size_t heads = 8;
  std::size_t ff = 512;
  double dropout = 0.1;
  // data
  std::string potential = "double_well";
  double dw_a = 1.0;
  double dw_b = 1.0;
  std::string manifold_path;
  std::string initial_source;
  std::string target_source;
  std::string sampling = "fixed";

  void set(const std::string& key, const std::string& value);
  void validate() const;
  /// Canonical `key = value` text, one line per field, in declaration order.
  std::string to_text() const;

  dyn::DynamicsParams dynamics() const;
  bias::NetConfig net_config() const;
  obj::Objective objective_kind() const { return obj::parse_objective(objective); }
  Sampling sampling_kind() const;
};

/// Every recognised configuration key, in canonical order.
const std::vector<std::string>& config_keys();

/// Parses `key = value` lines; `#` starts a comment. Unknown keys raise InputError naming the key.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

/// Point clouds and landscape the run draws from.
struct TrainInputs {
  Mat initial;   // fixed: the n x d initial state; cluster: source cloud
  Mat target;    // fixed: the n x d target state; cluster: target cloud
  energy::Potential potential;
};

/// Loads the potential and the two sources named in the config.
TrainInputs load_inputs(const TrainConfig& config);

/// The n rows of `cloud` nearest to row `seed_index` (itself first), ordered by distance.
Mat nn_cluster(const Mat& cloud, std::size_t seed_index, std::size_t n);

/// Initial states and targets for one rollout phase.
struct Episode {
  std::vector<SystemState> initial;
  std::vector<TargetSpec> targets;
  std::vector<std::uint64_t> seeds;
};

Episode sample_episode(const TrainConfig& config, const TrainInputs& inputs, std::size_t count, std::uint64_t seed);

struct TrainReport {
  std::vector<double> loss;         // mean training loss per rollout
  std::vector<double> mean_reward;  // mean terminal reward of each rollout phase
  double wall_seconds = 0.0;
  std::filesystem::path checkpoint;
};

class Trainer {
 public:
  Trainer(TrainConfig config, TrainInputs inputs);

  /// Runs the full loop. With a non-empty out_dir a checkpoint is written after every rollout.
  TrainReport run(const std::filesystem::path& out_dir = {});

  /// Samples M starts and rolls them out under the current parameters.
  std::vector<dyn::Trajectory> rollout_phase(std::size_t rollout_index);
  /// One optimiser step on the given batch; returns the loss before the update.
  double train_step(std::span<const dyn::Trajectory* const> batch, std::uint64_t dropout_seed);
  /// n_epochs steps on buffer samples; returns per-step losses.
  std::vector<double> train_phase(std::size_t rollout_index);

  const TrainConfig& config() const noexcept { return config_; }
  const TrainInputs& inputs() const noexcept { return inputs_; }
  bias::BiasNetwork& network() noexcept { return net_; }
  const bias::BiasNetwork& network() const noexcept { return net_; }
  buffer::ReplayBuffer& replay() noexcept { return buffer_; }
  double lv_w() const noexcept { return lv_w_; }

 private:
  TrainConfig config_;
  TrainInputs inputs_;
  dyn::DynamicsParams dyn_;
  bias::BiasNetwork net_;
  buffer::ReplayBuffer buffer_;
  ad::AdamState adam_;
  ad::AdamState adam_w_;
  obj::LossGraph loss_;
  double lv_w_ = 0.0;
  bool lv_w_initialised_ = false;
  std::mt19937_64 batch_rng_;
  unsigned threads_ = 1;
};

/// Rolls out `initial` under the trained bias (no updates).
std::vector<dyn::Trajectory> infer(const bias::BiasNetwork& net, std::span<const SystemState> initial,
                                   std::span<const TargetSpec> targets, const dyn::DynamicsParams& params,
                                   const energy::Potential& potential, std::uint64_t seed);

/// Worker count from ESBM_THREADS (default 1).
unsigned thread_count();

}  // namespace esbm::train
