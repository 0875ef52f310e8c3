// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include "esbm/types.hpp"

namespace esbm::energy {

enum class PotentialKind { DoubleWell, MullerBrown, RbfManifold };

PotentialKind parse_potential_kind(const std::string& name);
std::string to_string(PotentialKind kind);

// U(x) = a (x0^2 - 1)^2 + (b/2) sum_{j>0} x_j^2
double double_well(std::span<const double> x, std::span<double> grad, double a = 1.0, double b = 1.0);

// Standard four-term Mueller-Brown surface, D = 2.
double muller_brown(std::span<const double> x, std::span<double> grad);

/// Gaussian RBF fit to a point cloud:
///   h_j(x) = sum_m omega(m, j) exp(-(lambda_m / 2) |x - c_m|^2)
///   M_j(x) = (h_j(x) + eps)^(-alpha)
///   U(x)   = sum_j log(M_j(x) + eps)
/// so U is close to zero on the data and grows to about D * alpha * log(1/eps) away from it.
struct RbfManifold {
  Mat centroids;  // N_c x D
  Vec lambda;     // N_c
  Mat omega;      // N_c x D
  double kappa = 1.0;
  double eps = 1e-6;
  double alpha = 1.0;

  std::size_t dim() const { return static_cast<std::size_t>(centroids.cols()); }
  std::size_t n_centers() const { return static_cast<std::size_t>(centroids.rows()); }

  /// h_j(x) for all j.
  Vec h(std::span<const double> x) const;
  double energy(std::span<const double> x, std::span<double> grad) const;

  void save(const std::filesystem::path& path) const;
  static RbfManifold load(const std::filesystem::path& path);
};

struct RbfFitOptions {
  std::size_t n_centers = 150;
  double kappa = 1.5;
  std::uint64_t seed = 0;
  int kmeans_iterations = 50;
  int max_reseeds = 5;
  double ridge = 1e-8;
  double eps = 1e-6;
  double alpha = 1.0;
};

struct RbfFitResult {
  RbfManifold manifold;
  double residual = 0.0;       // mean over points and coordinates of (1 - h_j)^2
  bool nonnegative_refit = false;
  int kmeans_restarts = 0;
};

struct KMeansResult {
  Mat centroids;
  std::vector<std::size_t> labels;
  int restarts = 0;
};

/// k-means++ seeding followed by Lloyd iterations; an empty cluster restarts
/// the whole run with the next seed, up to max_reseeds times.
KMeansResult kmeans(const Mat& data, std::size_t k, std::uint64_t seed, int iterations, int max_reseeds);

RbfFitResult fit_rbf_manifold(const Mat& data, const RbfFitOptions& options);

/// Nonnegative least squares on normal equations: min x'Ax/2 - b'x, x >= 0 (Lawson-Hanson active set).
Vec nnls_normal(const Mat& A, const Vec& b);

/// Energy landscape evaluated per particle; the system energy is the sum over particles.
class Potential {
 public:
  static Potential double_well(double a = 1.0, double b = 1.0);
  static Potential muller_brown();
  static Potential manifold(std::shared_ptr<const RbfManifold> m);

  PotentialKind kind() const noexcept { return kind_; }
  /// Required per-particle dimension, or 0 if any dimension is accepted.
  std::size_t dim() const noexcept;
  const RbfManifold* rbf() const noexcept { return manifold_.get(); }

  double point(std::span<const double> x, std::span<double> grad) const;
  /// Sum over rows of R; grad (same shape as R) is written when non-null.
  double system(const Mat& R, Mat* grad) const;

 private:
  PotentialKind kind_ = PotentialKind::DoubleWell;
  double a_ = 1.0, b_ = 1.0;
  std::shared_ptr<const RbfManifold> manifold_;
};

}  // namespace esbm::energy
