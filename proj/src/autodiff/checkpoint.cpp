// SPDX-License-Identifier: Apache-2.0
#include "esbm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "esbm/error.hpp"

namespace esbm::ad {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'E', 'S', 'B', 'M'};
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw InputError(std::string("checkpoint truncated while reading ") + what);
  }
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParameterSet& tensors) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw InputError("checkpoint write failed");
}

ParameterSet read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw InputError("not an ESBM checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw InputError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in, "count");
  ParameterSet out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint32_t>(in, "name length");
    if (len > 4096) throw InputError("checkpoint name length out of range");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw InputError("checkpoint truncated while reading name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank > kMaxRank) throw InputError("checkpoint rank out of range for '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = get<std::uint64_t>(in, "extent");
    const std::size_t count_elems = numel(shape);
    if (count_elems > (std::size_t{1} << 32)) throw InputError("checkpoint tensor too large: '" + name + "'");
    std::vector<double> data(count_elems);
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count_elems * sizeof(double)))) {
      throw InputError("checkpoint truncated in payload of '" + name + "'");
    }
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite()) throw InputError("checkpoint tensor '" + name + "' contains non-finite values");
    if (!out.emplace(std::move(name), std::move(t)).second) throw InputError("duplicate tensor name in checkpoint");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw InputError("trailing bytes after checkpoint records");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, tensors);
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace esbm::ad
