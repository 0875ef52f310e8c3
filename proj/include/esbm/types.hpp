// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstddef>

namespace esbm {

/// Row-major dense matrix; n x d particle arrays and P x D point clouds.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Positions and velocities of n particles in d dimensions.
struct SystemState {
  Mat R;
  Mat V;
  std::size_t t_index = 0;

  std::size_t n() const { return static_cast<std::size_t>(R.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(R.cols()); }
};

/// Gaussian target around R_B with radius sigma; particle i pairs with row i.
struct TargetSpec {
  Mat R_B;
  double sigma = 0.1;
};

}  // namespace esbm
