// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "esbm/biasnet.hpp"
#include "esbm/dynamics.hpp"
#include "esbm/graph.hpp"

namespace esbm::obj {

enum class Objective { CrossEntropy, LogVariance };

Objective parse_objective(const std::string& name);
std::string to_string(Objective objective);

/// -|R_T - R_B|^2 / (2 sigma^2)
double terminal_reward(const Mat& R_T, const TargetSpec& target);

struct PathScore {
  double reward = 0.0;
  double log_p0 = 0.0;
  double log_pb = 0.0;
  double log_weight = 0.0;  // reward + log_p0 - log_pb
};

PathScore score(const dyn::Trajectory& traj);

/// Discretised path functional for current-parameter controls b_theta (K x n*d):
///   1/2 sum |b_theta|^2 dt - sum b_theta . b_bar dt - sum b_theta . dW
double f_hat(const dyn::Trajectory& traj, const Mat& b_theta);

/// Softmax of the log weights (max subtracted first).
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> batch_weights(std::span<const PathScore> scores);

/// sum_b w_b F_b with weights held fixed.
double ce_loss(std::span<const double> f_hats, std::span<const double> weights);
/// mean_b (F_b + r_b - w)^2
double lv_loss(std::span<const double> f_hats, std::span<const double> rewards, double w);

struct LossResult {
  double loss = 0.0;
  std::vector<double> f_hat;   // per trajectory
  ad::Gradients grads;         // network parameters, plus "lv.w" for the log-variance objective
};

/// Differentiable objective over a batch of stored trajectories. The bias
/// network is re-evaluated at every stored state X_0..X_{K-1} of every
/// trajectory in one graph pass. Not thread-safe.
class LossGraph {
 public:
  LossGraph(const bias::NetConfig& config, Objective objective);

  LossResult run(const bias::BiasNetwork& net, std::span<const dyn::Trajectory* const> batch, double lv_w,
                 const ad::EvalOptions& options = {}, bool want_gradients = true);

  /// b_theta at every stored state of the last batch, shaped (batch*K, n, d).
  const ad::Tensor& last_bias() const { return bg_.graph.value(bg_.b); }

 private:
  bias::BiasGraph bg_;
  Objective objective_;
  ad::NodeId coeff_, half_dt_, weights_, rewards_, lv_w_, f_hat_, loss_;
};

}  // namespace esbm::obj
