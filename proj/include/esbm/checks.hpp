// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "esbm/graph.hpp"

namespace esbm::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double worst = 0.0;  // largest error, or violation count, depending on the suite
  double seconds = 0.0;
};

/// Largest entrywise |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) over every
/// trainable leaf of `loss`, using five-point central differences with step h (refined
/// down to h/100 where the estimate is step-sensitive).
double gradcheck(ad::Graph& graph, ad::NodeId loss, ad::ParameterSet& leaves, const ad::Bindings& fixed,
                 const ad::EvalOptions& options, double h = 1e-3);

/// Every autodiff primitive (and composed attention) against finite differences.
CheckResult gradcheck_primitives(std::size_t seeds = 100, std::uint64_t base_seed = 0);
/// Randomised small bias networks, all parameters, dropout active with a fixed mask seed.
CheckResult gradcheck_network(std::size_t seeds = 100, std::uint64_t base_seed = 0);
/// Stored log densities vs the discrete Girsanov sum and vs recomputation from the path.
CheckResult girsanov(std::size_t rollouts = 200, std::uint64_t base_seed = 0);
/// F_hat + r against r + log p0 - log p^theta recomputed from transition densities.
CheckResult ce_identity(std::size_t trajectories = 200, std::uint64_t base_seed = 0);
/// <b_i, s_i> >= 0 and projector residuals on random networks, states and targets.
CheckResult cone_constraint(std::size_t draws = 10000, std::uint64_t base_seed = 0);
/// Distance to the ray point r + rho s never increases for admissible step sizes.
CheckResult step_bound(std::size_t draws = 10000, std::uint64_t base_seed = 0);
/// Hungarian vs exhaustive assignment, MMD identities, W1 <= W2.
CheckResult metric_oracles(std::size_t cases = 1000, std::uint64_t base_seed = 0);

}  // namespace esbm::checks
