// SPDX-License-Identifier: Apache-2.0
#include <Eigen/LU>
#include <Eigen/SVD>
#include <cmath>

#include "esbm/biasnet.hpp"
#include "esbm/error.hpp"

namespace esbm::bias {

KabschResult kabsch_align(const Mat& R, const Mat& R_ref, const std::vector<bool>& mask) {
  const Eigen::Index n = R.rows(), d = R.cols();
  if (R_ref.rows() != n || R_ref.cols() != d) throw ShapeError("kabsch_align: R and R_ref differ in shape");
  if (d != 2 && d != 3) throw ShapeError("kabsch_align: d must be 2 or 3, got " + std::to_string(d));
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(n)) throw ShapeError("kabsch_align: mask length mismatch");
  auto use = [&](Eigen::Index i) { return mask.empty() || mask[static_cast<std::size_t>(i)]; };

  Eigen::Index count = 0;
  Vec c = Vec::Zero(d), c_ref = Vec::Zero(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!use(i)) continue;
    c += R.row(i).transpose();
    c_ref += R_ref.row(i).transpose();
    ++count;
  }
  if (count < d) throw InputError("kabsch_align: need at least d masked particles");
  c /= static_cast<double>(count);
  c_ref /= static_cast<double>(count);

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!use(i)) continue;
    H += (R.row(i).transpose() - c) * (R_ref.row(i).transpose() - c_ref).transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec& sv = svd.singularValues();
  const double tol = 1e-12 * std::max(1.0, sv[0]);
  Eigen::Index rank = 0;
  for (Eigen::Index k = 0; k < d; ++k) rank += sv[k] > tol ? 1 : 0;
  if (rank < d - 1) throw NumericError("kabsch_align: degenerate point cloud (covariance rank " + std::to_string(rank) + ")");

  const Eigen::MatrixXd U = svd.matrixU(), V = svd.matrixV();
  Eigen::MatrixXd D = Eigen::MatrixXd::Identity(d, d);
  D(d - 1, d - 1) = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  KabschResult out;
  out.rotation = V * D * U.transpose();
  out.translation = c_ref - out.rotation * c;
  out.aligned = (R * out.rotation.transpose()).rowwise() + out.translation.transpose();
  double ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (use(i)) ss += (out.aligned.row(i) - R_ref.row(i)).squaredNorm();
  }
  out.rmsd = std::sqrt(ss / static_cast<double>(count));
  return out;
}

}  // namespace esbm::bias
