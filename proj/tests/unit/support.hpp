// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "esbm/biasnet.hpp"
#include "esbm/types.hpp"

namespace testing {

inline esbm::Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  esbm::Mat m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
  return m;
}

inline esbm::SystemState random_state(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  esbm::SystemState s;
  s.R = random_mat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d), rng);
  s.V = random_mat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d), rng);
  return s;
}

inline esbm::bias::NetConfig small_net(std::size_t n, std::size_t d) {
  esbm::bias::NetConfig c;
  c.n = n;
  c.d = d;
  c.hidden = 8;
  c.layers = 2;
  c.heads = 2;
  c.ff = 16;
  c.dropout = 0.0;
  return c;
}

// Every parameter gets a random offset so no head is left at its zero init.
inline void perturb(esbm::bias::BiasNetwork& net, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& [name, t] : net.params()) {
    for (double& v : t.data()) v += u(rng);
  }
}

inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("esbm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
