// SPDX-License-Identifier: Apache-2.0
#include "esbm/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "esbm/error.hpp"

namespace esbm::synth {

Mat two_moons(std::size_t count, double noise, double scale, std::uint64_t seed) {
  if (count < 2) throw InputError("two_moons: need at least 2 points");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, noise);
  const std::size_t upper = count / 2;
  Mat X(static_cast<Eigen::Index>(count), 2);
  for (std::size_t k = 0; k < count; ++k) {
    const bool top = k < upper;
    const std::size_t j = top ? k : k - upper;
    const std::size_t m = top ? upper : count - upper;
    const double t = std::numbers::pi * static_cast<double>(j) / static_cast<double>(m > 1 ? m - 1 : 1);
    const double x = top ? std::cos(t) : 1.0 - std::cos(t);
    const double y = top ? std::sin(t) : 0.5 - std::sin(t);
    X(static_cast<Eigen::Index>(k), 0) = scale * (x + jitter(rng));
    X(static_cast<Eigen::Index>(k), 1) = scale * (y + jitter(rng));
  }
  return X;
}

ClusterCloud two_clusters(std::size_t count_each, std::size_t dim, double separation, double spread, std::uint64_t seed) {
  if (count_each == 0 || dim == 0) throw InputError("two_clusters: empty cloud");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](double shift) {
    Mat X(static_cast<Eigen::Index>(count_each), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      for (Eigen::Index j = 0; j < X.cols(); ++j) {
        X(i, j) = spread * std::pow(0.7, static_cast<double>(j)) * normal(rng) + (j == 0 ? shift : 0.0);
      }
    }
    return X;
  };
  ClusterCloud c;
  c.source = draw(-0.5 * separation);
  c.target = draw(0.5 * separation);
  return c;
}

Mat stack(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw ShapeError("stack: column counts differ");
  Mat out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

}  // namespace esbm::synth
