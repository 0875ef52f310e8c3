// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "esbm/dynamics.hpp"
#include "esbm/energy.hpp"
#include "esbm/types.hpp"

namespace esbm::metrics {

inline constexpr std::size_t kMaxAssignment = 512;

struct MetricsConfig {
  std::vector<double> mmd_bandwidths{0.01, 0.1, 1.0, 10.0, 100.0};
  double thp_radius = 0.75;
  std::vector<std::size_t> cv;        // coordinate subset used by THP; empty = all
  std::size_t wasserstein_dims = 2;   // leading coordinates; 0 = all
};

/// Mixture kernel averaged over bandwidths: mean_s exp(-|x - y|^2 / (2 s^2)).
double mixture_kernel(std::span<const double> x, std::span<const double> y, std::span<const double> bandwidths);

/// Biased (V-statistic) squared MMD between equally sized samples (rows).
double rbf_mmd(const Mat& X, const Mat& Y, std::span<const double> bandwidths);

/// Minimum-cost perfect matching on a square cost matrix; result[i] is the column assigned to row i.
std::vector<std::size_t> hungarian(const Mat& cost);

/// Exact empirical W_p (p = 1 or 2) between equally sized samples using the
/// first `dims` coordinates (0 = all).
double wasserstein(const Mat& X, const Mat& Y, int p, std::size_t dims = 0);

/// Rows drawn uniformly with replacement.
Mat resample(const Mat& X, std::size_t count, std::mt19937_64& rng);

/// Brings X and Y to a common row count min(|X|, |Y|, cap); a set already at that
/// size is used as is, the other is resampled with replacement.
std::pair<Mat, Mat> equalize(const Mat& X, const Mat& Y, std::size_t cap, std::mt19937_64& rng);

/// RMSD over masked particles, after Kabsch alignment when `align` is set.
double rmsd(const Mat& R, const Mat& R_ref, const std::vector<bool>& mask = {}, bool align = true);

/// Distance used by THP: |xi(R) - xi(R_B)| over the selected coordinates of all particles.
double cv_distance(const Mat& R, const Mat& R_B, const std::vector<std::size_t>& cv);

/// Percentage of endpoints within thp_radius of their targets.
double thp(std::span<const Mat> endpoints, std::span<const Mat> targets, const MetricsConfig& config);

/// Highest energy along the path, for hit trajectories only.
std::optional<double> ets(const dyn::Trajectory& traj, const energy::Potential& potential, bool hit);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
};
Summary summarize(std::span<const double> values);

}  // namespace esbm::metrics
