// SPDX-License-Identifier: Apache-2.0
#include "esbm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "esbm/biasnet.hpp"
#include "esbm/error.hpp"

namespace esbm::metrics {

namespace {

double sq_dist(const double* a, const double* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

// mean over pairs of the mixture kernel
double mean_kernel(const Mat& A, const Mat& B, std::span<const double> bw) {
  std::vector<double> inv(bw.size());
  for (std::size_t s = 0; s < bw.size(); ++s) inv[s] = 1.0 / (2.0 * bw[s] * bw[s]);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      const double d2 = sq_dist(A.row(i).data(), B.row(j).data(), A.cols());
      double k = 0.0;
      for (double c : inv) k += std::exp(-d2 * c);
      acc += k / static_cast<double>(bw.size());
    }
  }
  return acc / static_cast<double>(A.rows() * B.rows());
}

}  // namespace

double mixture_kernel(std::span<const double> x, std::span<const double> y, std::span<const double> bandwidths) {
  if (x.size() != y.size()) throw ShapeError("mixture_kernel: dimension mismatch");
  if (bandwidths.empty()) throw InputError("mixture_kernel: no bandwidths");
  const double d2 = sq_dist(x.data(), y.data(), static_cast<Eigen::Index>(x.size()));
  double k = 0.0;
  for (double s : bandwidths) k += std::exp(-d2 / (2.0 * s * s));
  return k / static_cast<double>(bandwidths.size());
}

double rbf_mmd(const Mat& X, const Mat& Y, std::span<const double> bandwidths) {
  if (X.rows() == 0 || Y.rows() == 0) throw InputError("rbf_mmd: empty sample");
  if (X.cols() != Y.cols()) throw ShapeError("rbf_mmd: samples differ in dimension");
  if (X.rows() != Y.rows()) throw ShapeError("rbf_mmd: samples must have equal size (resample first)");
  if (bandwidths.empty()) throw InputError("rbf_mmd: no bandwidths");
  for (double s : bandwidths) {
    if (!(s > 0.0)) throw InputError("rbf_mmd: bandwidths must be positive");
  }
  const double v = mean_kernel(X, X, bandwidths) + mean_kernel(Y, Y, bandwidths) - 2.0 * mean_kernel(X, Y, bandwidths);
  return std::max(v, 0.0);
}

double wasserstein(const Mat& X, const Mat& Y, int p, std::size_t dims) {
  if (p != 1 && p != 2) throw InputError("wasserstein: order must be 1 or 2");
  if (X.rows() == 0 || Y.rows() == 0) throw InputError("wasserstein: empty sample");
  if (X.rows() != Y.rows()) throw ShapeError("wasserstein: samples must have equal size (resample first)");
  if (X.cols() != Y.cols()) throw ShapeError("wasserstein: samples differ in dimension");
  const auto M = static_cast<std::size_t>(X.rows());
  if (M > kMaxAssignment) {
    throw InputError("wasserstein: " + std::to_string(M) + " points exceeds the exact-assignment limit of " +
                     std::to_string(kMaxAssignment) + "; subsample first");
  }
  const Eigen::Index D = dims == 0 ? X.cols() : std::min<Eigen::Index>(static_cast<Eigen::Index>(dims), X.cols());
  Mat cost(X.rows(), Y.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < Y.rows(); ++j) {
      const double d2 = sq_dist(X.row(i).data(), Y.row(j).data(), D);
      cost(i, j) = p == 1 ? std::sqrt(d2) : d2;
    }
  }
  const std::vector<std::size_t> a = hungarian(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < M; ++i) total += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a[i]));
  const double mean = total / static_cast<double>(M);
  return p == 1 ? mean : std::sqrt(mean);
}

Mat resample(const Mat& X, std::size_t count, std::mt19937_64& rng) {
  if (X.rows() == 0) throw InputError("resample: empty sample");
  std::uniform_int_distribution<Eigen::Index> pick(0, X.rows() - 1);
  Mat out(static_cast<Eigen::Index>(count), X.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = X.row(pick(rng));
  return out;
}

std::pair<Mat, Mat> equalize(const Mat& X, const Mat& Y, std::size_t cap, std::mt19937_64& rng) {
  if (X.rows() == 0 || Y.rows() == 0) throw InputError("equalize: empty sample");
  const auto m = std::min({static_cast<std::size_t>(X.rows()), static_cast<std::size_t>(Y.rows()), cap});
  auto fit = [&](const Mat& A) { return static_cast<std::size_t>(A.rows()) == m ? A : resample(A, m, rng); };
  Mat a = fit(X);
  Mat b = fit(Y);
  return {std::move(a), std::move(b)};
}

double rmsd(const Mat& R, const Mat& R_ref, const std::vector<bool>& mask, bool align) {
  if (R.rows() != R_ref.rows() || R.cols() != R_ref.cols()) throw ShapeError("rmsd: shapes differ");
  if (align) return bias::kabsch_align(R, R_ref, mask).rmsd;
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(R.rows())) throw ShapeError("rmsd: mask length mismatch");
  double ss = 0.0;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < R.rows(); ++i) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
    ss += (R.row(i) - R_ref.row(i)).squaredNorm();
    ++count;
  }
  if (count == 0) throw InputError("rmsd: empty particle mask");
  return std::sqrt(ss / static_cast<double>(count));
}

double cv_distance(const Mat& R, const Mat& R_B, const std::vector<std::size_t>& cv) {
  if (R.rows() != R_B.rows() || R.cols() != R_B.cols()) throw ShapeError("cv_distance: shapes differ");
  if (cv.empty()) return (R - R_B).norm();
  double ss = 0.0;
  for (Eigen::Index i = 0; i < R.rows(); ++i) {
    for (std::size_t j : cv) {
      if (j >= static_cast<std::size_t>(R.cols())) throw ShapeError("cv_distance: coordinate index out of range");
      const double t = R(i, static_cast<Eigen::Index>(j)) - R_B(i, static_cast<Eigen::Index>(j));
      ss += t * t;
    }
  }
  return std::sqrt(ss);
}

double thp(std::span<const Mat> endpoints, std::span<const Mat> targets, const MetricsConfig& config) {
  if (endpoints.size() != targets.size()) throw ShapeError("thp: endpoints and targets differ in count");
  if (endpoints.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t m = 0; m < endpoints.size(); ++m) {
    if (cv_distance(endpoints[m], targets[m], config.cv) < config.thp_radius) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(endpoints.size());
}

std::optional<double> ets(const dyn::Trajectory& traj, const energy::Potential& potential, bool hit) {
  if (!hit) return std::nullopt;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= traj.K; ++k) best = std::max(best, potential.system(traj.positions(k), nullptr));
  return best;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace esbm::metrics
