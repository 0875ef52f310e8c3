// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <cmath>

#include "esbm/energy.hpp"
#include "esbm/error.hpp"

namespace esbm::energy {

namespace {

constexpr std::array<double, 4> kA = {-200.0, -100.0, -170.0, 15.0};
constexpr std::array<double, 4> ka = {-1.0, -1.0, -6.5, 0.7};
constexpr std::array<double, 4> kb = {0.0, 0.0, 11.0, 0.6};
constexpr std::array<double, 4> kc = {-10.0, -10.0, -6.5, 0.7};
constexpr std::array<double, 4> kx0 = {1.0, 0.0, -0.5, -1.0};
constexpr std::array<double, 4> ky0 = {0.0, 0.5, 1.5, 1.0};

void check_finite(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("potential evaluated at a non-finite point");
  }
}

}  // namespace

PotentialKind parse_potential_kind(const std::string& name) {
  if (name == "double_well") return PotentialKind::DoubleWell;
  if (name == "muller_brown") return PotentialKind::MullerBrown;
  if (name == "rbf_manifold") return PotentialKind::RbfManifold;
  throw InputError("unknown potential '" + name + "' (expected double_well, muller_brown or rbf_manifold)");
}

std::string to_string(PotentialKind kind) {
  switch (kind) {
    case PotentialKind::DoubleWell: return "double_well";
    case PotentialKind::MullerBrown: return "muller_brown";
    case PotentialKind::RbfManifold: return "rbf_manifold";
  }
  return "?";
}

double double_well(std::span<const double> x, std::span<double> grad, double a, double b) {
  if (x.empty()) throw ShapeError("double_well: empty point");
  check_finite(x);
  const double q = x[0] * x[0] - 1.0;
  double u = a * q * q;
  if (!grad.empty()) grad[0] = 4.0 * a * q * x[0];
  for (std::size_t j = 1; j < x.size(); ++j) {
    u += 0.5 * b * x[j] * x[j];
    if (!grad.empty()) grad[j] = b * x[j];
  }
  return u;
}

double muller_brown(std::span<const double> x, std::span<double> grad) {
  if (x.size() != 2) throw ShapeError("muller_brown: expected D = 2, got " + std::to_string(x.size()));
  check_finite(x);
  double u = 0.0, gx = 0.0, gy = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const double dx = x[0] - kx0[k];
    const double dy = x[1] - ky0[k];
    const double e = kA[k] * std::exp(ka[k] * dx * dx + kb[k] * dx * dy + kc[k] * dy * dy);
    u += e;
    gx += e * (2.0 * ka[k] * dx + kb[k] * dy);
    gy += e * (kb[k] * dx + 2.0 * kc[k] * dy);
  }
  if (!grad.empty()) {
    grad[0] = gx;
    grad[1] = gy;
  }
  return u;
}

Potential Potential::double_well(double a, double b) {
  Potential p;
  p.kind_ = PotentialKind::DoubleWell;
  p.a_ = a;
  p.b_ = b;
  return p;
}

Potential Potential::muller_brown() {
  Potential p;
  p.kind_ = PotentialKind::MullerBrown;
  return p;
}

Potential Potential::manifold(std::shared_ptr<const RbfManifold> m) {
  if (!m) throw InputError("manifold potential needs a fitted manifold");
  Potential p;
  p.kind_ = PotentialKind::RbfManifold;
  p.manifold_ = std::move(m);
  return p;
}

std::size_t Potential::dim() const noexcept {
  switch (kind_) {
    case PotentialKind::DoubleWell: return 0;
    case PotentialKind::MullerBrown: return 2;
    case PotentialKind::RbfManifold: return manifold_->dim();
  }
  return 0;
}

double Potential::point(std::span<const double> x, std::span<double> grad) const {
  switch (kind_) {
    case PotentialKind::DoubleWell: return energy::double_well(x, grad, a_, b_);
    case PotentialKind::MullerBrown: return energy::muller_brown(x, grad);
    case PotentialKind::RbfManifold: return manifold_->energy(x, grad);
  }
  return 0.0;
}

double Potential::system(const Mat& R, Mat* grad) const {
  const auto d = static_cast<std::size_t>(R.cols());
  if (dim() != 0 && dim() != d) {
    throw ShapeError(to_string(kind_) + ": particle dimension " + std::to_string(d) + ", expected " +
                     std::to_string(dim()));
  }
  if (grad) grad->resize(R.rows(), R.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < R.rows(); ++i) {
    std::span<const double> x(R.data() + i * R.cols(), d);
    std::span<double> g;
    if (grad) g = std::span<double>(grad->data() + i * R.cols(), d);
    total += point(x, g);
  }
  return total;
}

}  // namespace esbm::energy
