// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "esbm/types.hpp"

namespace esbm::io {

/// One point per row, all columns numeric; a non-numeric first line is taken as a header.
Mat read_points_csv(const std::filesystem::path& path);
void write_points_csv(const std::filesystem::path& path, const Mat& points, const std::vector<std::string>& header = {});

/// %.17g, so values round-trip exactly.
std::string format_double(double v);

std::string read_file(const std::filesystem::path& path);

/// Hash of "blob <size>\0<content>", the identifier git gives the same bytes.
std::string git_blob_sha1(const std::string& content);
std::string git_blob_sha1_file(const std::filesystem::path& path);

}  // namespace esbm::io
