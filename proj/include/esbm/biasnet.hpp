// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "esbm/graph.hpp"
#include "esbm/types.hpp"

namespace esbm::bias {

/// Below this distance to the target the direction is undefined and the bias is zero.
inline constexpr double kCoincidenceTol = 1e-9;

struct KabschResult {
  Mat rotation;     // d x d, det = +1
  Vec translation;  // aligned_i = rotation * r_i + translation
  Mat aligned;      // n x d
  double rmsd = 0.0;  // over the masked particles, after alignment
};

/// Rigid superposition of R onto R_ref using only particles with mask[i] set
/// (empty mask = all). Requires d in {2, 3}.
KabschResult kabsch_align(const Mat& R, const Mat& R_ref, const std::vector<bool>& mask = {});

/// b_i = alpha_i s_i + (I - s_i s_i^T) h_i, row by row.
Mat assemble_bias(const Vec& alpha, const Mat& h, const Mat& s_hat);

/// Row i = [r_i, v_i (or zeros), r_B,i - r_i, |r_B,i - r_i|].
Mat build_features(const SystemState& state, const TargetSpec& target, bool velocity_conditioning);

/// Added to softplus so the along-s_hat magnitude stays positive after rounding.
inline constexpr double kAlphaFloor = 1e-6;

struct NetConfig {
  std::size_t n = 1;
  std::size_t d = 2;
  std::size_t hidden = 256;
  std::size_t layers = 4;
  std::size_t heads = 8;
  std::size_t ff = 512;
  double dropout = 0.1;
  bool velocity_conditioning = true;
  bool md_mode = false;
  std::vector<bool> align_mask;  // MD mode only; empty = all particles

  std::size_t token_dim() const { return 3 * d + 1; }
  void validate() const;
};

struct BiasOutput {
  Vec alpha;   // n, softplus of the raw head
  Mat h;       // n x d, raw correction vectors
  Mat s_hat;   // n x d, zero rows where undefined
  Mat b;       // n x d
};

/// Graph handles for a batch of B states with n particles each.
struct BiasGraph {
  ad::Graph graph;
  ad::NodeId tokens;     // (B, n, 3d+1)
  ad::NodeId s_hat;      // (B, n, d) in the feature frame
  ad::NodeId mask;       // (B, n)
  ad::NodeId rotation;   // (B, d, d), MD mode only
  ad::NodeId alpha_raw;  // (B, n)
  ad::NodeId alpha;      // (B, n)
  ad::NodeId h;          // (B, n, d)
  ad::NodeId b;          // (B, n, d) in the original frame
};

/// Transformer encoder over particle tokens with scalar and vector heads.
class BiasNetwork {
 public:
  BiasNetwork() = default;
  /// Random initialisation; the last layer of each head starts at zero so the
  /// untrained bias is (ln(2) + kAlphaFloor) * s_hat.
  BiasNetwork(NetConfig config, std::uint64_t seed);
  BiasNetwork(NetConfig config, ad::ParameterSet params);

  const NetConfig& config() const noexcept { return config_; }
  const ad::ParameterSet& params() const noexcept { return params_; }
  ad::ParameterSet& params() noexcept { return params_; }

  /// Writes the tensor checkpoint to `path` and the JSON sidecar to `path` + ".json".
  void save(const std::filesystem::path& path) const;
  static BiasNetwork load(const std::filesystem::path& path);

 private:
  NetConfig config_;
  ad::ParameterSet params_;
};

/// Builds the network graph. Parameters are trainable leaves named as in BiasNetwork::params().
BiasGraph build_bias_graph(const NetConfig& config);

/// Packed graph inputs for a batch of states.
struct BiasInputs {
  ad::Tensor tokens, s_hat, mask, rotation;
  std::vector<Mat> rotations;  // MD mode: per-sample rotation back to the original frame
};

BiasInputs prepare_inputs(const NetConfig& config, std::span<const SystemState> states,
                          std::span<const TargetSpec* const> targets);

/// Adds the inputs and every parameter of `net` to a binding map.
ad::Bindings make_bindings(const BiasNetwork& net, const BiasInputs& inputs);

/// Reusable evaluator for many states against one parameter snapshot. Not thread-safe.
class BiasEvaluator {
 public:
  explicit BiasEvaluator(const NetConfig& config);

  /// Bias forces for a batch, as a (B, n, d) tensor.
  const ad::Tensor& forces(const BiasNetwork& net, std::span<const SystemState> states,
                           std::span<const TargetSpec* const> targets);
  BiasOutput compute(const BiasNetwork& net, const SystemState& state, const TargetSpec& target);

 private:
  void run(const BiasNetwork& net, std::span<const SystemState> states, std::span<const TargetSpec* const> targets);

  BiasGraph g_;
  BiasInputs inputs_;
};

BiasOutput compute_bias(const BiasNetwork& net, const SystemState& state, const TargetSpec& target);

}  // namespace esbm::bias
