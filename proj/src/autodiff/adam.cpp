// SPDX-License-Identifier: Apache-2.0
#include "esbm/adam.hpp"

#include <cmath>

#include "esbm/error.hpp"

namespace esbm::ad {

void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state) {
  if (!(state.lr > 0.0)) throw InputError("adam: learning rate must be positive");
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw StateError("adam: gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape()) {
      throw ShapeError("adam: gradient shape " + to_string(g.shape()) + " does not match parameter '" + name +
                       "' " + to_string(it->second.shape()));
    }
    if (!g.all_finite()) throw NumericError("adam: non-finite gradient for '" + name + "'");
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);

  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, g.shape(), 0.0);
    auto [v_it, v_new] = state.second_moment.try_emplace(name, g.shape(), 0.0);
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double global_norm(const Gradients& grads) {
  double acc = 0.0;
  for (const auto& [name, g] : grads) {
    for (double x : g.data()) acc += x * x;
  }
  return std::sqrt(acc);
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& x : g.data()) x *= f;
    }
  }
  return norm;
}

}  // namespace esbm::ad
