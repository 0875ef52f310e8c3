// SPDX-License-Identifier: Apache-2.0
#include "esbm/biasnet.hpp"
#include "esbm/error.hpp"

namespace esbm::bias {

namespace {

void check_pair(const SystemState& state, const TargetSpec& target) {
  if (state.R.rows() != target.R_B.rows() || state.R.cols() != target.R_B.cols()) {
    throw ShapeError("state is " + std::to_string(state.R.rows()) + "x" + std::to_string(state.R.cols()) +
                     " but target is " + std::to_string(target.R_B.rows()) + "x" + std::to_string(target.R_B.cols()));
  }
  if (state.V.rows() != state.R.rows() || state.V.cols() != state.R.cols()) {
    throw ShapeError("state velocities do not match positions");
  }
}

// Writes one sample's token rows, s_hat rows and mask entries.
void fill_sample(const Mat& R, const Mat& V, const Mat& R_B, bool velocity, double* tok, double* s, double* m) {
  const Eigen::Index n = R.rows(), d = R.cols();
  const Eigen::Index width = 3 * d + 1;
  for (Eigen::Index i = 0; i < n; ++i) {
    double* row = tok + i * width;
    double dist2 = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double diff = R_B(i, j) - R(i, j);
      row[j] = R(i, j);
      row[d + j] = velocity ? V(i, j) : 0.0;
      row[2 * d + j] = diff;
      dist2 += diff * diff;
    }
    const double dist = std::sqrt(dist2);
    row[3 * d] = dist;
    const bool defined = dist >= kCoincidenceTol;
    m[i] = defined ? 1.0 : 0.0;
    for (Eigen::Index j = 0; j < d; ++j) s[i * d + j] = defined ? (R_B(i, j) - R(i, j)) / dist : 0.0;
  }
}

}  // namespace

Mat assemble_bias(const Vec& alpha, const Mat& h, const Mat& s_hat) {
  if (h.rows() != s_hat.rows() || h.cols() != s_hat.cols() || alpha.size() != h.rows()) {
    throw ShapeError("assemble_bias: alpha, h and s_hat disagree in shape");
  }
  Mat b(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const double dot = h.row(i).dot(s_hat.row(i));
    b.row(i) = alpha[i] * s_hat.row(i) + h.row(i) - dot * s_hat.row(i);
  }
  return b;
}

Mat build_features(const SystemState& state, const TargetSpec& target, bool velocity_conditioning) {
  check_pair(state, target);
  const Eigen::Index n = state.R.rows(), d = state.R.cols();
  Mat tokens(n, 3 * d + 1);
  std::vector<double> s(static_cast<std::size_t>(n * d)), m(static_cast<std::size_t>(n));
  fill_sample(state.R, state.V, target.R_B, velocity_conditioning, tokens.data(), s.data(), m.data());
  return tokens;
}

BiasInputs prepare_inputs(const NetConfig& config, std::span<const SystemState> states,
                          std::span<const TargetSpec* const> targets) {
  if (states.size() != targets.size()) throw ShapeError("prepare_inputs: states and targets differ in count");
  const std::size_t B = states.size(), n = config.n, d = config.d;
  BiasInputs in;
  in.tokens = ad::Tensor({B, n, config.token_dim()});
  in.s_hat = ad::Tensor({B, n, d});
  in.mask = ad::Tensor({B, n});
  if (config.md_mode) {
    in.rotation = ad::Tensor({B, d, d});
    in.rotations.resize(B);
  }
  for (std::size_t k = 0; k < B; ++k) {
    const SystemState& st = states[k];
    const TargetSpec& tg = *targets[k];
    check_pair(st, tg);
    if (st.n() != n || st.d() != d) {
      throw ShapeError("prepare_inputs: state is " + std::to_string(st.n()) + "x" + std::to_string(st.d()) +
                       ", network expects " + std::to_string(n) + "x" + std::to_string(d));
    }
    double* tok = in.tokens.raw() + k * n * config.token_dim();
    double* s = in.s_hat.raw() + k * n * d;
    double* m = in.mask.raw() + k * n;
    if (config.md_mode) {
      const KabschResult kr = kabsch_align(st.R, tg.R_B, config.align_mask);
      const Mat V = st.V * kr.rotation.transpose();
      fill_sample(kr.aligned, V, tg.R_B, config.velocity_conditioning, tok, s, m);
      // row-vector b' Q maps aligned-frame forces back: (Q^T b'^T)^T
      std::copy_n(kr.rotation.data(), d * d, in.rotation.raw() + k * d * d);
      in.rotations[k] = kr.rotation;
    } else {
      fill_sample(st.R, st.V, tg.R_B, config.velocity_conditioning, tok, s, m);
    }
  }
  return in;
}

}  // namespace esbm::bias
