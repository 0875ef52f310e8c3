// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "esbm/graph.hpp"

namespace esbm::ad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary tensor container: "ESBM", u32 version, u32 count, then per tensor
/// u32 name length, name bytes, u32 rank, u64 extents, f64 payload. All
/// integers and floats little-endian. Records are written in name order.
void write_checkpoint(std::ostream& out, const ParameterSet& tensors);
ParameterSet read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& tensors);
ParameterSet load_checkpoint(const std::filesystem::path& path);

}  // namespace esbm::ad
