// SPDX-License-Identifier: Apache-2.0
#include "esbm/objective.hpp"

#include <algorithm>
#include <cmath>

#include "esbm/error.hpp"

namespace esbm::obj {

Objective parse_objective(const std::string& name) {
  if (name == "ce") return Objective::CrossEntropy;
  if (name == "lv") return Objective::LogVariance;
  throw InputError("unknown objective '" + name + "' (expected ce or lv)");
}

std::string to_string(Objective objective) { return objective == Objective::CrossEntropy ? "ce" : "lv"; }

double terminal_reward(const Mat& R_T, const TargetSpec& target) {
  if (!(target.sigma > 0.0)) throw InputError("terminal_reward: sigma must be positive");
  if (R_T.rows() != target.R_B.rows() || R_T.cols() != target.R_B.cols()) {
    throw ShapeError("terminal_reward: endpoint and target differ in shape");
  }
  return -(R_T - target.R_B).squaredNorm() / (2.0 * target.sigma * target.sigma);
}

PathScore score(const dyn::Trajectory& traj) {
  PathScore s;
  s.reward = traj.reward;
  s.log_p0 = traj.log_p0;
  s.log_pb = traj.log_pb;
  s.log_weight = s.reward + s.log_p0 - s.log_pb;
  return s;
}

double f_hat(const dyn::Trajectory& traj, const Mat& b_theta) {
  if (b_theta.rows() != traj.noise.rows() || b_theta.cols() != traj.noise.cols()) {
    throw ShapeError("f_hat: control array has " + std::to_string(b_theta.rows()) + " steps, trajectory has " +
                     std::to_string(traj.noise.rows()));
  }
  const double quad = 0.5 * b_theta.squaredNorm() * traj.dt;
  const double cross = (b_theta.array() * traj.behavior_bias.array()).sum() * traj.dt;
  const double noise = (b_theta.array() * traj.noise.array()).sum();
  return quad - cross - noise;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InputError("softmax over an empty set");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(logits[i] - mx);
    z += w[i];
  }
  for (double& x : w) x /= z;
  return w;
}

std::vector<double> batch_weights(std::span<const PathScore> scores) {
  std::vector<double> l(scores.size());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = scores[i].log_weight;
  return softmax(l);
}

double ce_loss(std::span<const double> f_hats, std::span<const double> weights) {
  if (f_hats.empty()) throw InputError("ce_loss: empty batch");
  if (f_hats.size() != weights.size()) throw ShapeError("ce_loss: weights and batch differ in length");
  double l = 0.0;
  for (std::size_t i = 0; i < f_hats.size(); ++i) l += weights[i] * f_hats[i];
  return l;
}

double lv_loss(std::span<const double> f_hats, std::span<const double> rewards, double w) {
  if (f_hats.empty()) throw InputError("lv_loss: empty batch");
  if (f_hats.size() != rewards.size()) throw ShapeError("lv_loss: rewards and batch differ in length");
  double l = 0.0;
  for (std::size_t i = 0; i < f_hats.size(); ++i) {
    const double g = f_hats[i] + rewards[i] - w;
    l += g * g;
  }
  return l / static_cast<double>(f_hats.size());
}

LossGraph::LossGraph(const bias::NetConfig& config, Objective objective)
    : bg_(bias::build_bias_graph(config)), objective_(objective) {
  ad::Graph& g = bg_.graph;
  coeff_ = g.input("loss.coeff");        // (N, n, d): b_bar dt + dW
  half_dt_ = g.input("loss.half_dt");    // scalar
  ad::NodeId select = g.input("loss.select");  // (B, N) trajectory membership
  ad::NodeId per = g.sub(g.mul(g.square(bg_.b), half_dt_), g.mul(bg_.b, coeff_));
  per = g.sum(g.sum(per, 2), 1);                           // (N)
  f_hat_ = g.matmul(select, g.reshape(per, {0, 1}));       // (B, 1)
  if (objective_ == Objective::CrossEntropy) {
    weights_ = g.input("loss.weights");  // (B, 1)
    loss_ = g.sum_all(g.mul(f_hat_, weights_));
  } else {
    rewards_ = g.input("loss.rewards");  // (B, 1)
    lv_w_ = g.input("lv.w", true);       // scalar
    ad::NodeId dev = g.sub(g.add(f_hat_, rewards_), lv_w_);
    loss_ = g.sum_all(g.mean(g.square(dev), 0));
  }
}

LossResult LossGraph::run(const bias::BiasNetwork& net, std::span<const dyn::Trajectory* const> batch, double lv_w,
                          const ad::EvalOptions& options, bool want_gradients) {
  if (batch.empty()) throw InputError("loss: empty batch");
  const dyn::Trajectory& first = *batch.front();
  const std::size_t K = first.K, n = first.n, d = first.d, B = batch.size(), N = B * K;
  if (n != net.config().n || d != net.config().d) throw ShapeError("loss: trajectories do not match the network shape");

  std::vector<SystemState> states;
  std::vector<const TargetSpec*> targets;
  states.reserve(N);
  targets.reserve(N);
  ad::Tensor coeff({N, n, d}), select({B, N}, 0.0), weights({B, 1}), rewards({B, 1});
  std::vector<PathScore> scores;
  for (std::size_t t = 0; t < B; ++t) {
    const dyn::Trajectory& tr = *batch[t];
    if (tr.K != K || tr.n != n || tr.d != d || tr.dt != first.dt) {
      throw ShapeError("loss: trajectories in a batch must share K, n, d and dt");
    }
    for (std::size_t k = 0; k < K; ++k) {
      states.push_back(tr.state(k));
      targets.push_back(&tr.target);
      double* c = coeff.raw() + (t * K + k) * n * d;
      for (std::size_t j = 0; j < n * d; ++j) {
        c[j] = tr.behavior_bias(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) * tr.dt +
               tr.noise(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
      }
      select[t * N + t * K + k] = 1.0;
    }
    scores.push_back(score(tr));
    rewards[t] = tr.reward;
  }
  const std::vector<double> w = batch_weights(scores);
  for (std::size_t t = 0; t < B; ++t) weights[t] = w[t];

  const bias::BiasInputs inputs = bias::prepare_inputs(net.config(), states, targets);
  ad::Bindings bind = bias::make_bindings(net, inputs);
  const ad::Tensor half_dt = ad::Tensor::scalar(0.5 * first.dt);
  const ad::Tensor w_lv = ad::Tensor::scalar(lv_w);
  bind.emplace("loss.coeff", &coeff);
  bind.emplace("loss.half_dt", &half_dt);
  bind.emplace("loss.select", &select);
  if (objective_ == Objective::CrossEntropy) {
    bind.emplace("loss.weights", &weights);
  } else {
    bind.emplace("loss.rewards", &rewards);
    bind.emplace("lv.w", &w_lv);
  }

  LossResult out;
  out.loss = bg_.graph.evaluate(loss_, bind, options).item();
  const ad::Tensor& f = bg_.graph.value(f_hat_);
  out.f_hat.assign(f.data().begin(), f.data().end());
  if (want_gradients) out.grads = bg_.graph.gradients(loss_);
  return out;
}

}  // namespace esbm::obj
