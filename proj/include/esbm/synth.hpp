// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "esbm/types.hpp"

namespace esbm::synth {

/// Classic interleaved half circles in 2-D, scaled by `scale`, with isotropic Gaussian jitter.
Mat two_moons(std::size_t count, double noise, double scale, std::uint64_t seed);

struct ClusterCloud {
  Mat source;  // first population
  Mat target;  // second population
};

/// Two anisotropic Gaussian populations in `dim` dimensions whose means differ by
/// `separation` along the first axis. Spreads shrink geometrically with the axis index
/// so most variance lies in the leading coordinates.
ClusterCloud two_clusters(std::size_t count_each, std::size_t dim, double separation, double spread, std::uint64_t seed);

/// Rows of a and b stacked.
Mat stack(const Mat& a, const Mat& b);

}  // namespace esbm::synth
