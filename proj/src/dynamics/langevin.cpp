// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>

#include "esbm/dynamics.hpp"
#include "esbm/error.hpp"

namespace esbm::dyn {

Mode parse_mode(const std::string& name) {
  if (name == "overdamped") return Mode::Overdamped;
  if (name == "underdamped") return Mode::Underdamped;
  throw InputError("unknown dynamics mode '" + name + "' (expected overdamped or underdamped)");
}

std::string to_string(Mode mode) { return mode == Mode::Overdamped ? "overdamped" : "underdamped"; }

void DynamicsParams::validate(std::size_t n) const {
  if (!(gamma > 0.0)) throw InputError("dynamics: gamma must be positive");
  if (!(dt > 0.0)) throw InputError("dynamics: dt must be positive");
  if (K < 1) throw InputError("dynamics: K must be at least 1");
  if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw InputError("dynamics: temperatures must be positive");
  if (!(k_B > 0.0)) throw InputError("dynamics: k_B must be positive");
  if (masses.size() != 0) {
    if (static_cast<std::size_t>(masses.size()) != n) throw InputError("dynamics: one mass per particle required");
    if ((masses.array() <= 0.0).any()) throw InputError("dynamics: masses must be positive");
  }
}

double DynamicsParams::tau(std::size_t k) const {
  if (K <= 1) return tau_start;
  const double s = static_cast<double>(std::min(k, K - 1)) / static_cast<double>(K - 1);
  return tau_start + (tau_end - tau_start) * s;
}

double DynamicsParams::sigma(std::size_t k, std::size_t i) const {
  const double t = tau(k);
  if (mode == Mode::Overdamped) return std::sqrt(2.0 * k_B * t / gamma);
  return std::sqrt(2.0 * gamma * k_B * t / mass(i));
}

Vec sigma_vector(const DynamicsParams& params, std::size_t k, std::size_t n) {
  Vec s(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) s[static_cast<Eigen::Index>(i)] = params.sigma(k, i);
  return s;
}

Mat drift(const energy::Potential& potential, const Mat& R, const DynamicsParams& params) {
  Mat grad;
  potential.system(R, &grad);
  if (params.mode == Mode::Overdamped) return -grad / params.gamma;
  for (Eigen::Index i = 0; i < grad.rows(); ++i) grad.row(i) /= -params.mass(static_cast<std::size_t>(i));
  return grad;
}

Mat sample_noise(std::size_t n, std::size_t d, double dt, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(dt));
  Mat dW(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < dW.size(); ++k) dW.data()[k] = normal(rng);
  return dW;
}

const Mat& noisy_channel(const SystemState& state, Mode mode) {
  return mode == Mode::Overdamped ? state.R : state.V;
}

Mat transition_mean(const SystemState& state, const Mat& drift_f, const Mat& control_u, const DynamicsParams& params,
                    std::size_t k) {
  const Vec sig = sigma_vector(params, k, state.n());
  Mat push = drift_f + sig.asDiagonal() * control_u;
  if (params.mode == Mode::Overdamped) return state.R + push * params.dt;
  return state.V + (push - params.gamma * state.V) * params.dt;
}

SystemState step(const SystemState& state, const Mat& drift_f, const Mat& control_u, const DynamicsParams& params,
                 std::size_t k, const Mat& dW) {
  const auto n = state.R.rows(), d = state.R.cols();
  for (const Mat* m : {&drift_f, &control_u, &dW}) {
    if (m->rows() != n || m->cols() != d) throw ShapeError("step: drift, control and noise must be n x d");
  }
  if (!drift_f.allFinite()) throw NumericError("non-finite force at step " + std::to_string(k));
  if (!control_u.allFinite()) throw NumericError("non-finite control at step " + std::to_string(k));
  const Vec sig = sigma_vector(params, k, state.n());
  SystemState next;
  next.t_index = state.t_index + 1;
  const Mat mean = transition_mean(state, drift_f, control_u, params, k);
  if (params.mode == Mode::Overdamped) {
    next.R = mean + sig.asDiagonal() * dW;
    next.V = state.V;
  } else {
    next.V = mean + sig.asDiagonal() * dW;
    next.R = state.R + next.V * params.dt;
  }
  if (!next.R.allFinite() || !next.V.allFinite()) throw NumericError("state became non-finite at step " + std::to_string(k));
  return next;
}

SystemState step(const SystemState& state, const Mat& drift_f, const Mat& control_u, const DynamicsParams& params,
                 std::size_t k, std::mt19937_64& rng, Mat& dW_out) {
  dW_out = sample_noise(state.n(), state.d(), params.dt, rng);
  return step(state, drift_f, control_u, params, k, dW_out);
}

double transition_logdensity(const Mat& x1, const Mat& mean, const Vec& sigma, double dt) {
  if (x1.rows() != mean.rows() || x1.cols() != mean.cols() || sigma.size() != x1.rows()) {
    throw ShapeError("transition_logdensity: shape mismatch");
  }
  if (!(dt > 0.0)) throw InputError("transition_logdensity: dt must be positive");
  double lp = 0.0;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (Eigen::Index i = 0; i < x1.rows(); ++i) {
    const double s = sigma[i];
    if (!(s > 0.0)) throw InputError("transition_logdensity: sigma must be positive");
    const double var = s * s * dt;
    const double sq = (x1.row(i) - mean.row(i)).squaredNorm();
    lp += -0.5 * sq / var - static_cast<double>(x1.cols()) * (half_log_2pi + 0.5 * std::log(var));
  }
  return lp;
}

double transition_logdensity(const Mat& x1, const Mat& mean, double sigma, double dt) {
  return transition_logdensity(x1, mean, Vec::Constant(x1.rows(), sigma), dt);
}

}  // namespace esbm::dyn
