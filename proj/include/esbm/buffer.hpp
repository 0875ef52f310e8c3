// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <random>
#include <vector>

#include "esbm/dynamics.hpp"
#include "esbm/objective.hpp"

namespace esbm::buffer {

struct Entry {
  dyn::Trajectory trajectory;
  obj::PathScore score;
  std::uint64_t serial = 0;  // insertion order
};

/// FIFO replay buffer sampled from Categorical(softmax of stored log weights).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(dyn::Trajectory trajectory, const obj::PathScore& score);
  void push(dyn::Trajectory trajectory);  // scores from the trajectory itself

  /// Draws with replacement; returns indices into entries().
  std::vector<std::size_t> sample_indices(std::size_t batch_size, std::mt19937_64& rng) const;
  std::vector<const Entry*> sample(std::size_t batch_size, std::mt19937_64& rng) const;

  /// Softmax over the stored log weights, in entry order.
  std::vector<double> probabilities() const;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::uint64_t inserted() const noexcept { return counter_; }
  const std::deque<Entry>& entries() const noexcept { return entries_; }
  const Entry& operator[](std::size_t i) const { return entries_.at(i); }

  /// Trajectory CSVs, a per-entry CSV of controls/noise/scales and index.json.
  void save(const std::filesystem::path& dir) const;
  static ReplayBuffer load(const std::filesystem::path& dir);

 private:
  std::size_t capacity_;
  std::deque<Entry> entries_;
  std::uint64_t counter_ = 0;
};

}  // namespace esbm::buffer
