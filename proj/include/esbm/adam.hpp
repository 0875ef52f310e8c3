// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "esbm/graph.hpp"

namespace esbm::ad {

struct AdamState {
  ParameterSet first_moment;
  ParameterSet second_moment;
  std::uint64_t step_count = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update applied in place. Parameters without a
/// gradient entry are left untouched. Validation happens before anything is
/// written, so a rejected call leaves params and state unchanged.
void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state);

/// Global L2 norm over all gradient tensors.
double global_norm(const Gradients& grads);

/// Rescales grads in place so their global norm is at most max_norm. Returns the pre-clip norm.
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace esbm::ad
