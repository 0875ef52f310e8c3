// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "esbm/error.hpp"
#include "esbm/io.hpp"

namespace esbm::io {

namespace {

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t end = line.find(',', pos);
    if (end == std::string::npos) end = line.size();
    std::size_t a = pos, b = end;
    while (a < b && (line[a] == ' ' || line[a] == '\t')) ++a;
    while (b > a && (line[b - 1] == ' ' || line[b - 1] == '\t' || line[b - 1] == '\r')) --b;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(line.data() + a, line.data() + b, v);
    if (a == b || ec != std::errc() || ptr != line.data() + b) return false;
    out.push_back(v);
    pos = end + 1;
  }
  return true;
}

}  // namespace

Mat read_points_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  std::vector<std::vector<double>> rows;
  std::vector<double> row;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (!parse_row(line, row)) {
      if (lineno == 1) continue;  // header
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": non-numeric value");
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(rows.front().size()) + " columns");
    }
    rows.push_back(row);
  }
  if (rows.empty()) throw InputError(path.string() + ": no data rows");
  Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  if (!out.allFinite()) throw InputError(path.string() + ": non-finite values");
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_points_csv(const std::filesystem::path& path, const Mat& points, const std::vector<std::string>& header) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  if (!header.empty()) out << '\n';
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index j = 0; j < points.cols(); ++j) out << (j ? "," : "") << format_double(points(i, j));
    out << '\n';
  }
  if (!out) throw InputError("write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace esbm::io
