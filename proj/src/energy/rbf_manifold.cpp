// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Cholesky>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "esbm/checkpoint.hpp"
#include "esbm/energy.hpp"
#include "esbm/error.hpp"

namespace esbm::energy {

namespace {

double sq_dist(const double* a, const double* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

// Returns false if a cluster ended up empty.
bool kmeans_once(const Mat& data, std::size_t k, std::uint64_t seed, int iterations, Mat& centers,
                 std::vector<std::size_t>& labels) {
  const Eigen::Index P = data.rows(), D = data.cols();
  std::mt19937_64 rng(seed);
  centers.resize(static_cast<Eigen::Index>(k), D);

  // k-means++ seeding
  std::vector<double> best(P, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<Eigen::Index> first(0, P - 1);
  centers.row(0) = data.row(first(rng));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < P; ++i) {
      best[i] = std::min(best[i], sq_dist(data.row(i).data(), centers.row(c - 1).data(), D));
      total += best[i];
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = P - 1;
      for (Eigen::Index i = 0; i < P; ++i) {
        u -= best[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    centers.row(static_cast<Eigen::Index>(c)) = data.row(pick);
  }

  labels.assign(P, 0);
  std::vector<std::size_t> counts(k);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < P; ++i) {
      std::size_t arg = 0;
      double dmin = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = sq_dist(data.row(i).data(), centers.row(static_cast<Eigen::Index>(c)).data(), D);
        if (dd < dmin) {
          dmin = dd;
          arg = c;
        }
      }
      if (labels[i] != arg) changed = true;
      labels[i] = arg;
    }
    Mat sums = Mat::Zero(static_cast<Eigen::Index>(k), D);
    std::fill(counts.begin(), counts.end(), 0);
    for (Eigen::Index i = 0; i < P; ++i) {
      sums.row(static_cast<Eigen::Index>(labels[i])) += data.row(i);
      ++counts[labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) return false;
      centers.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
    }
    if (!changed && it > 0) break;
  }
  return true;
}

}  // namespace

KMeansResult kmeans(const Mat& data, std::size_t k, std::uint64_t seed, int iterations, int max_reseeds) {
  if (k == 0) throw InputError("kmeans: k must be positive");
  if (static_cast<std::size_t>(data.rows()) < k) {
    throw InputError("kmeans: " + std::to_string(data.rows()) + " points for " + std::to_string(k) + " clusters");
  }
  KMeansResult out;
  for (int attempt = 0; attempt <= max_reseeds; ++attempt) {
    if (kmeans_once(data, k, seed + static_cast<std::uint64_t>(attempt), iterations, out.centroids, out.labels)) {
      out.restarts = attempt;
      return out;
    }
  }
  throw NumericError("kmeans: empty cluster after " + std::to_string(max_reseeds) + " re-seeds");
}

Vec nnls_normal(const Mat& A, const Vec& b) {
  const Eigen::Index n = b.size();
  Vec x = Vec::Zero(n);
  std::vector<bool> passive(n, false);
  const double tol = 1e-12 * std::max(1.0, b.cwiseAbs().maxCoeff());

  auto solve_passive = [&](Vec& z) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (passive[i]) idx.push_back(i);
    }
    const auto m = static_cast<Eigen::Index>(idx.size());
    Mat As(m, m);
    Vec bs(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      bs[r] = b[idx[r]];
      for (Eigen::Index c = 0; c < m; ++c) As(r, c) = A(idx[r], idx[c]);
    }
    Eigen::LDLT<Mat> ldlt(As);
    if (ldlt.info() != Eigen::Success) throw NumericError("nnls: singular normal equations");
    Vec zs = ldlt.solve(bs);
    z = Vec::Zero(n);
    for (Eigen::Index r = 0; r < m; ++r) z[idx[r]] = zs[r];
  };

  for (int outer = 0; outer < 3 * n + 10; ++outer) {
    Vec w = b - A * x;
    Eigen::Index best = -1;
    double wmax = tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!passive[i] && w[i] > wmax) {
        wmax = w[i];
        best = i;
      }
    }
    if (best < 0) return x;
    passive[best] = true;
    for (int inner = 0; inner < 3 * n + 10; ++inner) {
      Vec z;
      solve_passive(z);
      bool feasible = true;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (passive[i] && z[i] <= 0.0) feasible = false;
      }
      if (feasible) {
        x = z;
        break;
      }
      double step = 1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (passive[i] && z[i] <= 0.0) step = std::min(step, x[i] / (x[i] - z[i]));
      }
      x += step * (z - x);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (passive[i] && x[i] <= 1e-15) {
          passive[i] = false;
          x[i] = 0.0;
        }
      }
    }
  }
  return x;
}

RbfFitResult fit_rbf_manifold(const Mat& data, const RbfFitOptions& options) {
  const Eigen::Index P = data.rows(), D = data.cols();
  if (P == 0 || D == 0) throw InputError("fit_rbf_manifold: empty point cloud");
  if (!data.allFinite()) throw InputError("fit_rbf_manifold: non-finite coordinates");
  if (!(options.kappa > 0.0)) throw InputError("fit_rbf_manifold: kappa must be positive");
  const std::size_t k = options.n_centers;
  if (static_cast<std::size_t>(P) < k) {
    throw InputError("fit_rbf_manifold: need at least N_c = " + std::to_string(k) + " points, got " + std::to_string(P));
  }

  KMeansResult km = kmeans(data, k, options.seed, options.kmeans_iterations, options.max_reseeds);

  RbfFitResult out;
  out.kmeans_restarts = km.restarts;
  RbfManifold& m = out.manifold;
  m.centroids = km.centroids;
  m.kappa = options.kappa;
  m.eps = options.eps;
  m.alpha = options.alpha;

  // within-cluster mean squared distance
  Vec msd = Vec::Zero(static_cast<Eigen::Index>(k));
  std::vector<std::size_t> counts(k, 0);
  for (Eigen::Index i = 0; i < P; ++i) {
    const std::size_t c = km.labels[i];
    msd[static_cast<Eigen::Index>(c)] += sq_dist(data.row(i).data(), m.centroids.row(static_cast<Eigen::Index>(c)).data(), D);
    ++counts[c];
  }
  double spread_sum = 0.0;
  int spread_n = 0;
  for (std::size_t c = 0; c < k; ++c) {
    msd[static_cast<Eigen::Index>(c)] /= static_cast<double>(counts[c]);
    if (msd[static_cast<Eigen::Index>(c)] > 0.0) {
      spread_sum += msd[static_cast<Eigen::Index>(c)];
      ++spread_n;
    }
  }
  // zero-spread clusters borrow the average spread (or 1 if every cluster is a single point)
  const double fallback = spread_n > 0 ? spread_sum / spread_n : 1.0;
  m.lambda.resize(static_cast<Eigen::Index>(k));
  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(k); ++c) {
    const double s = msd[c] > 0.0 ? msd[c] : fallback;
    m.lambda[c] = 0.5 / ((options.kappa * s) * (options.kappa * s));
  }

  Mat phi(P, static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < P; ++i) {
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(k); ++c) {
      phi(i, c) = std::exp(-0.5 * m.lambda[c] * sq_dist(data.row(i).data(), m.centroids.row(c).data(), D));
    }
  }
  Mat A = phi.transpose() * phi;
  A.diagonal().array() += options.ridge;
  const Vec rhs = phi.transpose() * Vec::Ones(P);

  Eigen::LDLT<Mat> ldlt(A);
  if (ldlt.info() != Eigen::Success || ldlt.isNegative()) throw NumericError("fit_rbf_manifold: singular normal equations");
  Vec w = ldlt.solve(rhs);
  if (!w.allFinite()) throw NumericError("fit_rbf_manifold: singular normal equations");
  if (w.minCoeff() < 0.0) {
    // h must stay nonnegative for the log-energy to exist everywhere
    w = nnls_normal(A, rhs);
    out.nonnegative_refit = true;
  }
  // every coordinate has the same target, so the per-coordinate systems coincide
  m.omega = w.replicate(1, D);

  const Vec hfit = phi * w;
  out.residual = (Vec::Ones(P) - hfit).squaredNorm() / static_cast<double>(P);
  return out;
}

Vec RbfManifold::h(std::span<const double> x) const {
  if (x.size() != dim()) throw ShapeError("manifold: point has " + std::to_string(x.size()) + " coordinates, expected " + std::to_string(dim()));
  Vec out = Vec::Zero(centroids.cols());
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double e = std::exp(-0.5 * lambda[c] * sq_dist(x.data(), centroids.row(c).data(), centroids.cols()));
    out += e * omega.row(c).transpose();
  }
  return out;
}

double RbfManifold::energy(std::span<const double> x, std::span<double> grad) const {
  const Eigen::Index D = centroids.cols();
  if (x.size() != dim()) throw ShapeError("manifold: point has " + std::to_string(x.size()) + " coordinates, expected " + std::to_string(dim()));
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("manifold energy evaluated at a non-finite point");
  }
  const Eigen::Map<const Vec> xv(x.data(), D);
  Vec h = Vec::Zero(D);
  Mat dh = Mat::Zero(D, D);  // dh(j, :) = grad of h_j
  const bool want_grad = !grad.empty();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const Vec diff = xv - centroids.row(c).transpose();
    const double e = std::exp(-0.5 * lambda[c] * diff.squaredNorm());
    if (e == 0.0) continue;
    h += e * omega.row(c).transpose();
    if (want_grad) dh += (-lambda[c] * e) * omega.row(c).transpose() * diff.transpose();
  }
  double u = 0.0;
  Vec g = Vec::Zero(D);
  for (Eigen::Index j = 0; j < D; ++j) {
    const double base = h[j] + eps;
    const double M = std::pow(base, -alpha);
    u += std::log(M + eps);
    if (want_grad) {
      const double dU_dh = -alpha * M / base / (M + eps);
      g += dU_dh * dh.row(j).transpose();
    }
  }
  if (want_grad) {
    for (Eigen::Index j = 0; j < D; ++j) grad[j] = g[j];
  }
  return u;
}

void RbfManifold::save(const std::filesystem::path& path) const {
  ad::ParameterSet t;
  const auto k = static_cast<std::size_t>(centroids.rows()), D = static_cast<std::size_t>(centroids.cols());
  t.emplace("centroids", ad::Tensor({k, D}, std::vector<double>(centroids.data(), centroids.data() + k * D)));
  t.emplace("lambda", ad::Tensor({k}, std::vector<double>(lambda.data(), lambda.data() + k)));
  t.emplace("omega", ad::Tensor({k, D}, std::vector<double>(omega.data(), omega.data() + k * D)));
  t.emplace("settings", ad::Tensor({3}, std::vector<double>{kappa, eps, alpha}));
  ad::save_checkpoint(path, t);
}

RbfManifold RbfManifold::load(const std::filesystem::path& path) {
  const ad::ParameterSet t = ad::load_checkpoint(path);
  for (const char* key : {"centroids", "lambda", "omega", "settings"}) {
    if (!t.contains(key)) throw InputError("manifold checkpoint " + path.string() + " lacks '" + key + "'");
  }
  const ad::Tensor& c = t.at("centroids");
  const ad::Tensor& l = t.at("lambda");
  const ad::Tensor& w = t.at("omega");
  const ad::Tensor& s = t.at("settings");
  if (c.rank() != 2 || w.shape() != c.shape() || l.rank() != 1 || l.dim(0) != c.dim(0) || s.size() != 3) {
    throw InputError("manifold checkpoint " + path.string() + " has inconsistent shapes");
  }
  RbfManifold m;
  const auto k = static_cast<Eigen::Index>(c.dim(0)), D = static_cast<Eigen::Index>(c.dim(1));
  m.centroids = Eigen::Map<const Mat>(c.raw(), k, D);
  m.omega = Eigen::Map<const Mat>(w.raw(), k, D);
  m.lambda = Eigen::Map<const Vec>(l.raw(), k);
  m.kappa = s[0];
  m.eps = s[1];
  m.alpha = s[2];
  if ((m.lambda.array() <= 0.0).any()) throw InputError("manifold checkpoint has nonpositive bandwidths");
  return m;
}

}  // namespace esbm::energy
