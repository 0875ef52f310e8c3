// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "esbm/biasnet.hpp"
#include "esbm/energy.hpp"
#include "esbm/types.hpp"

namespace esbm::dyn {

enum class Mode { Overdamped, Underdamped };

Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

struct DynamicsParams {
  Mode mode = Mode::Overdamped;
  double gamma = 1.0;
  double tau_start = 1.0;
  double tau_end = 1.0;
  double k_B = 1.0;
  double dt = 0.01;
  std::size_t K = 100;
  Vec masses;  // per particle; empty means unit masses

  void validate(std::size_t n) const;
  /// Linear from tau_start at k = 0 to tau_end at k = K - 1.
  double tau(std::size_t k) const;
  double mass(std::size_t i) const { return masses.size() ? masses[static_cast<Eigen::Index>(i)] : 1.0; }
  /// Diffusion scale of particle i at step k.
  double sigma(std::size_t k, std::size_t i) const;
};

/// Deterministic drift: -grad U / gamma (overdamped) or -grad U / m_i (underdamped).
Mat drift(const energy::Potential& potential, const Mat& R, const DynamicsParams& params);

/// Brownian increments with variance dt.
Mat sample_noise(std::size_t n, std::size_t d, double dt, std::mt19937_64& rng);

/// One Euler-Maruyama step with given increments dW. Control u enters as Sigma_k u.
/// Overdamped steps leave V unchanged; rollout() refreshes it.
SystemState step(const SystemState& state, const Mat& drift_f, const Mat& control_u, const DynamicsParams& params,
                 std::size_t k, const Mat& dW);

/// Same, drawing dW from rng; the increments are returned through dW_out.
SystemState step(const SystemState& state, const Mat& drift_f, const Mat& control_u, const DynamicsParams& params,
                 std::size_t k, std::mt19937_64& rng, Mat& dW_out);

/// sum over entries of log N(x1 | mean, sigma_i^2 dt); sigma holds one value per row.
double transition_logdensity(const Mat& x1, const Mat& mean, const Vec& sigma, double dt);
double transition_logdensity(const Mat& x1, const Mat& mean, double sigma, double dt);

/// A discrete path X_0..X_K plus what the objectives need to re-score it.
/// Per-step arrays are flattened row-major n*d blocks.
struct Trajectory {
  std::size_t n = 0, d = 0, K = 0;
  Mode mode = Mode::Overdamped;
  double dt = 0.0;
  Mat R;               // (K+1) x (n*d)
  Mat V;               // (K+1) x (n*d)
  Mat noise;           // K x (n*d)
  Mat behavior_bias;   // K x (n*d), the control used for this path
  Mat sigma;           // K x n
  double log_p0 = 0.0;
  double log_pb = 0.0;
  double reward = 0.0;
  TargetSpec target;
  std::uint64_t seed = 0;

  SystemState state(std::size_t k) const;
  Mat positions(std::size_t k) const;
  Mat row_block(const Mat& m, std::size_t k) const;
  /// Finite entries and consistent shapes.
  bool valid() const;
};

struct RolloutOptions {
  std::size_t chunk = 32;   // trajectories per lock-step batch
  unsigned threads = 1;
};

/// Rolls out one trajectory per (initial, target, seed) triple. A null network gives the base dynamics.
std::vector<Trajectory> rollout(const bias::BiasNetwork* net, std::span<const SystemState> initial,
                                std::span<const TargetSpec> targets, std::span<const std::uint64_t> seeds,
                                const DynamicsParams& params, const energy::Potential& potential,
                                const RolloutOptions& options = {});

Trajectory rollout_one(const bias::BiasNetwork* net, const SystemState& initial, const TargetSpec& target,
                       std::uint64_t seed, const DynamicsParams& params, const energy::Potential& potential);

/// Rolls out under an arbitrary control function u(state, k); used to cross-check the network path.
using ControlFn = std::function<Mat(const SystemState&, std::size_t)>;
Trajectory rollout_with_control(const ControlFn& control, const SystemState& initial, const TargetSpec& target,
                                std::uint64_t seed, const DynamicsParams& params, const energy::Potential& potential);

/// Diffusion scales of all particles at step k.
Vec sigma_vector(const DynamicsParams& params, std::size_t k, std::size_t n);

/// Mean of the noisy channel (positions when overdamped, velocities when underdamped) after step k.
Mat transition_mean(const SystemState& state, const Mat& drift_f, const Mat& control_u, const DynamicsParams& params,
                    std::size_t k);
/// The noisy channel of a state.
const Mat& noisy_channel(const SystemState& state, Mode mode);

/// log p(X_{1:K} | X_0) under control values ctrl (K x n*d), recomputed from the stored states.
double path_logdensity(const Trajectory& traj, const Mat& ctrl, const DynamicsParams& params,
                       const energy::Potential& potential);

/// Positions recomputed from X_0, stored increments and controls; max abs deviation from the stored path.
double reconstruction_error(const Trajectory& traj, const DynamicsParams& params, const energy::Potential& potential);

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);
/// Reads step,particle,x..,v.. rows into (K+1) states.
std::vector<SystemState> read_trajectory_csv(const std::filesystem::path& path);

}  // namespace esbm::dyn
