// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "esbm/energy.hpp"
#include "esbm/error.hpp"
#include "esbm/io.hpp"
#include "support.hpp"

using namespace esbm;
using namespace esbm::energy;

namespace {

double fd_error(const Potential& pot, std::vector<double> x) {
  std::vector<double> g(x.size());
  pot.point(x, g);
  double worst = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double keep = x[j], h = 1e-5 * std::max(1.0, std::abs(keep));
    x[j] = keep + h;
    const double up = pot.point(x, {});
    x[j] = keep - h;
    const double down = pot.point(x, {});
    x[j] = keep;
    const double num = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(num - g[j]) / std::max({std::abs(num), std::abs(g[j]), 1e-3}));
  }
  return worst;
}

}  // namespace

TEST_CASE("double well stationary points and barrier") {
  std::vector<double> g(2);
  CHECK(double_well(std::vector<double>{1.0, 0.0}, g) == 0.0);
  CHECK(double_well(std::vector<double>{-1.0, 0.0}, g) == 0.0);
  CHECK(double_well(std::vector<double>{0.0, 0.0}, g) == 1.0);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(double_well(std::vector<double>{0.0, 2.0}, g, 1.0, 3.0) == doctest::Approx(1.0 + 6.0));
}

TEST_CASE("Mueller-Brown reference values") {
  std::vector<double> g(2);
  CHECK(muller_brown(std::vector<double>{-0.55822363, 1.44172584}, g) == doctest::Approx(-146.69951720995402).epsilon(1e-12));
  CHECK(std::hypot(g[0], g[1]) < 1e-4);
  CHECK(muller_brown(std::vector<double>{-0.5582, 1.4417}, {}) == doctest::Approx(-146.69951471989697).epsilon(1e-13));
  CHECK(muller_brown(std::vector<double>{0.0, 0.0}, {}) == doctest::Approx(-48.40127417318389).epsilon(1e-13));
}

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const Potential dw = Potential::double_well(1.3, 0.7);
  const Potential mb = Potential::muller_brown();
  for (int k = 0; k < 100; ++k) {
    CHECK(fd_error(dw, {u(rng), u(rng), u(rng)}) < 1e-5);
    CHECK(fd_error(mb, {u(rng), 0.5 + u(rng)}) < 1e-5);
  }
}

TEST_CASE("Mueller-Brown rejects the wrong dimension") {
  const Potential mb = Potential::muller_brown();
  CHECK_THROWS_AS(mb.point(std::vector<double>{0.0, 0.0, 0.0}, {}), ShapeError);
}

TEST_CASE("rbf bandwidth from the cluster spread") {
  Mat data(2, 1);
  data << 0.0, 2.0;
  RbfFitOptions o;
  o.n_centers = 1;
  o.kappa = 1.0;
  const RbfFitResult fit = fit_rbf_manifold(data, o);
  CHECK(fit.manifold.centroids(0, 0) == doctest::Approx(1.0));
  CHECK(fit.manifold.lambda[0] == doctest::Approx(0.5));
}

TEST_CASE("rbf fit on a repeated point gives h = 1 at the point") {
  Mat data = Mat::Constant(5, 2, 0.3);
  RbfFitOptions o;
  o.n_centers = 1;
  const RbfFitResult fit = fit_rbf_manifold(data, o);
  const Vec h = fit.manifold.h(std::vector<double>{0.3, 0.3});
  CHECK(h[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(h[1] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("rbf fit needs at least as many points as centres") {
  Mat data = Mat::Zero(3, 2);
  RbfFitOptions o;
  o.n_centers = 4;
  CHECK_THROWS(fit_rbf_manifold(data, o));
}

TEST_CASE("two-moons golden fit") {
  const Mat data = io::read_points_csv(ESBM_DATA_DIR "/two_moons.csv");
  REQUIRE(data.rows() == 500);
  const RbfFitResult fit = fit_rbf_manifold(data, RbfFitOptions{});
  CHECK(fit.residual <= 1e-3);
  const auto dir = testing::scratch("moons");
  fit.manifold.save(dir / "m.ckpt");
  const std::string first = io::git_blob_sha1_file(dir / "m.ckpt");
  const RbfFitResult again = fit_rbf_manifold(data, RbfFitOptions{});
  again.manifold.save(dir / "m2.ckpt");
  CHECK(io::git_blob_sha1_file(dir / "m2.ckpt") == first);
  CHECK(first == ESBM_MOONS_CKPT_SHA);

  const RbfManifold loaded = RbfManifold::load(dir / "m.ckpt");
  const std::vector<double> x{data(7, 0), data(7, 1)};
  CHECK(loaded.energy(x, {}) == fit.manifold.energy(x, {}));
}

TEST_CASE("manifold energy is low on the data and high far away") {
  const Mat data = io::read_points_csv(ESBM_DATA_DIR "/two_moons.csv");
  const RbfFitResult fit = fit_rbf_manifold(data, RbfFitOptions{});
  const Potential pot = Potential::manifold(std::make_shared<const RbfManifold>(fit.manifold));
  const std::vector<double> on{data(0, 0), data(0, 1)};
  const std::vector<double> far{1e4, -1e4};
  CHECK(std::abs(pot.point(on, {})) < 0.1);
  const double ceiling = 2.0 * std::log(1.0 / fit.manifold.eps);
  CHECK(pot.point(far, {}) == doctest::Approx(ceiling).epsilon(1e-3));

  // displaced well off the cloud is higher than on it
  const double radius = 1.0 / std::sqrt(fit.manifold.lambda.minCoeff());
  const std::vector<double> off{data(0, 0), data(0, 1) + 5.0 * radius};
  CHECK(pot.point(off, {}) > pot.point(on, {}));
}

TEST_CASE("manifold gradient matches finite differences") {
  const Mat data = io::read_points_csv(ESBM_DATA_DIR "/two_moons.csv");
  const RbfFitResult fit = fit_rbf_manifold(data, RbfFitOptions{});
  const Potential pot = Potential::manifold(std::make_shared<const RbfManifold>(fit.manifold));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> jitter(0.0, 10.0);
  std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);
  for (int k = 0; k < 100; ++k) {
    const Eigen::Index i = pick(rng);
    CHECK(fd_error(pot, {data(i, 0) + jitter(rng), data(i, 1) + jitter(rng)}) < 1e-5);
  }
}

TEST_CASE("the manifold force points back toward the data") {
  const Mat data = io::read_points_csv(ESBM_DATA_DIR "/two_moons.csv");
  const RbfFitResult fit = fit_rbf_manifold(data, RbfFitOptions{});
  const Potential pot = Potential::manifold(std::make_shared<const RbfManifold>(fit.manifold));
  std::mt19937_64 rng(9);
  std::normal_distribution<double> off(0.0, 15.0);
  std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);
  int toward = 0, probes = 0;
  while (probes < 1000) {
    const Eigen::Index i = pick(rng);
    Eigen::RowVector2d x(data(i, 0) + off(rng), data(i, 1) + off(rng));
    Eigen::Index nearest = 0;
    const double d2 = (data.rowwise() - x).rowwise().squaredNorm().minCoeff(&nearest);
    if (d2 < 100.0) continue;  // inside the sheet the energy is flat
    ++probes;
    std::vector<double> g(2);
    pot.point(std::vector<double>{x[0], x[1]}, g);
    const Eigen::RowVector2d force(-g[0], -g[1]);
    if (force.dot(data.row(nearest) - x) > 0.0) ++toward;
  }
  CHECK(toward >= 950);
}

TEST_CASE("h stays finite and bounded") {
  const Mat data = io::read_points_csv(ESBM_DATA_DIR "/two_moons.csv");
  const RbfFitResult fit = fit_rbf_manifold(data, RbfFitOptions{});
  const double bound = static_cast<double>(fit.manifold.n_centers()) * fit.manifold.omega.cwiseAbs().maxCoeff();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 200.0);
  for (int k = 0; k < 200; ++k) {
    const Vec h = fit.manifold.h(std::vector<double>{normal(rng), normal(rng)});
    CHECK(h.allFinite());
    CHECK(h.minCoeff() >= 0.0);
    CHECK(h.maxCoeff() <= bound);
  }
}

TEST_CASE("nnls solves a small constrained problem") {
  // min |Ax - b|^2 with the unconstrained optimum having a negative entry
  Mat A(3, 2);
  A << 1, 0, 0, 1, 1, 1;
  Vec b(3);
  b << 1, -1, 0;
  const Vec x = nnls_normal(A.transpose() * A, A.transpose() * b);
  CHECK(x[1] == 0.0);
  CHECK(x[0] == doctest::Approx(0.5));
}

TEST_CASE("kmeans is deterministic under a seed") {
  std::mt19937_64 rng(1);
  const Mat data = testing::random_mat(200, 3, rng);
  const KMeansResult a = kmeans(data, 10, 4, 50, 5);
  const KMeansResult b = kmeans(data, 10, 4, 50, 5);
  CHECK(a.centroids == b.centroids);
  CHECK(a.labels == b.labels);
}
