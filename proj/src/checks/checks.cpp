// SPDX-License-Identifier: Apache-2.0
#include "esbm/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "esbm/biasnet.hpp"
#include "esbm/dynamics.hpp"
#include "esbm/error.hpp"
#include "esbm/metrics.hpp"
#include "esbm/objective.hpp"

namespace esbm::checks {

namespace {

using ad::Graph;
using ad::NodeId;
using ad::Shape;
using ad::Tensor;
using Clock = std::chrono::steady_clock;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

constexpr int kPrimitiveCases = 27;
const char* kCaseNames[kPrimitiveCases] = {
    "add",      "add_broadcast", "sub_broadcast", "mul_broadcast", "div",        "scale",     "matmul",
    "bmm",      "bmm_transposed", "transpose",    "reshape",       "concat",     "slice",     "sum",
    "mean",     "sum_all",       "broadcast",     "exp",           "log",        "sqrt",      "square",
    "softplus", "gelu",          "softmax",       "layer_norm",    "dropout",    "attention"};

// Builds one primitive case; returns the output node and fills the trainable leaves.
NodeId build_case(int which, Graph& g, std::mt19937_64& rng, ad::ParameterSet& leaves) {
  auto leaf = [&](const std::string& name, Shape s, double lo = -2.0, double hi = 2.0) {
    leaves.emplace(name, random_tensor(s, rng, lo, hi));
    return g.input(name, true);
  };
  const std::size_t a = pick(rng, 1, 3), b = pick(rng, 1, 4), c = pick(rng, 2, 4);
  switch (which) {
    case 0: return g.add(leaf("x", {a, b, c}), leaf("y", {a, b, c}));
    case 1: return g.add(leaf("x", {a, b, c}), leaf("y", {b, c}));
    case 2: return g.sub(leaf("x", {c}), leaf("y", {a, b, c}));
    case 3: return g.mul(leaf("x", {a, b, c}), leaf("y", {c}));
    case 4: {
      NodeId x = leaf("x", {a, c});
      Tensor den = random_tensor({a, c}, rng, 0.5, 2.0);
      std::bernoulli_distribution flip(0.5);
      for (double& v : den.data()) v = flip(rng) ? -v : v;
      leaves.emplace("y", std::move(den));
      return g.div(x, g.input("y", true));
    }
    case 5: return g.scale(leaf("x", {a, b}), -1.7);
    case 6: return g.matmul(leaf("x", {a, b, c}), leaf("y", {c, pick(rng, 1, 4)}));
    case 7: return g.batch_matmul(leaf("x", {a, b, c}), leaf("y", {a, c, pick(rng, 1, 4)}));
    case 8: return g.batch_matmul(leaf("x", {a, b, c}), leaf("y", {a, pick(rng, 1, 4), c}), true);
    case 9: {
      std::vector<std::size_t> perm = {0, 1, 2, 3};
      std::shuffle(perm.begin(), perm.end(), rng);
      return g.transpose(leaf("x", {a, b, c, 2}), perm);
    }
    case 10: return g.reshape(leaf("x", {a, b, c}), {b, 0});
    case 11: {
      const std::size_t axis = pick(rng, 0, 2);
      std::vector<NodeId> parts;
      for (int k = 0; k < 3; ++k) {
        Shape s = {a, b, c};
        s[axis] = pick(rng, 1, 3);
        parts.push_back(leaf("x" + std::to_string(k), s));
      }
      return g.concat(parts, axis);
    }
    case 12: {
      const std::size_t axis = pick(rng, 0, 2);
      Shape s = {a + 1, b + 1, c};
      const std::size_t lo = pick(rng, 0, s[axis] - 1), hi = pick(rng, lo + 1, s[axis]);
      return g.slice(leaf("x", s), axis, lo, hi);
    }
    case 13: return g.sum(leaf("x", {a, b, c}), pick(rng, 0, 2));
    case 14: return g.mean(leaf("x", {a, b, c}), pick(rng, 0, 2));
    case 15: return g.sum_all(leaf("x", {a, b, c}));
    case 16: return g.broadcast(leaf("x", {b, c}), {a, 2});
    case 17: return g.exp(leaf("x", {a, b, c}));
    case 18: return g.log(leaf("x", {a, b, c}, 0.5, 2.0));
    case 19: return g.sqrt(leaf("x", {a, b, c}, 0.5, 2.0));
    case 20: return g.square(leaf("x", {a, b, c}));
    case 21: return g.softplus(leaf("x", {a, b, c}));
    case 22: return g.gelu(leaf("x", {a, b, c}));
    case 23: return g.softmax(leaf("x", {a, b, c}), pick(rng, 0, 2));
    case 24: return g.layer_norm(leaf("x", {a, b, c}));
    case 25: return g.dropout(leaf("x", {a, b, c}), 0.3);
    default: {
      // single-head scaled dot-product attention over 2 tokens
      const std::size_t H = 4;
      NodeId x = leaf("x", {1, 2, H});
      NodeId q = g.matmul(x, leaf("wq", {H, H}, -1.0, 1.0));
      NodeId k = g.matmul(x, leaf("wk", {H, H}, -1.0, 1.0));
      NodeId v = g.matmul(x, leaf("wv", {H, H}, -1.0, 1.0));
      NodeId s = g.softmax(g.scale(g.batch_matmul(q, k, true), 0.5), 2);
      return g.matmul(g.batch_matmul(s, v), leaf("wo", {H, H}, -1.0, 1.0));
    }
  }
}

// sum(out * W) with W random, so every output entry matters.
NodeId weighted_loss(Graph& g, NodeId out, const ad::ParameterSet& leaves, const ad::Bindings& fixed,
                     const ad::EvalOptions& opts, std::mt19937_64& rng) {
  ad::Bindings b = fixed;
  for (const auto& [name, t] : leaves) b.emplace(name, &t);
  const Shape shape = g.evaluate(out, b, opts).shape();
  NodeId w = g.constant(random_tensor(shape, rng, -1.0, 1.0));
  return g.sum_all(g.mul(out, w));
}

bias::NetConfig random_net_config(std::mt19937_64& rng) {
  bias::NetConfig c;
  c.d = pick(rng, 1, 3);
  c.n = pick(rng, 1, 4);
  c.heads = pick(rng, 1, 2);
  c.hidden = 4 * c.heads;
  c.ff = pick(rng, 4, 12);
  c.layers = pick(rng, 1, 2);
  c.dropout = 0.1;
  c.velocity_conditioning = std::bernoulli_distribution(0.5)(rng);
  return c;
}

void randomise(bias::BiasNetwork& net, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& [name, t] : net.params()) {
    for (double& v : t.data()) v += u(rng);
  }
}

SystemState random_state(std::size_t n, std::size_t d, std::mt19937_64& rng, double spread = 1.5) {
  std::uniform_real_distribution<double> u(-spread, spread);
  SystemState s;
  s.R.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  s.V.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < s.R.size(); ++k) {
    s.R.data()[k] = u(rng);
    s.V.data()[k] = u(rng);
  }
  return s;
}

struct RandomSystem {
  bias::BiasNetwork net;
  dyn::DynamicsParams params;
  energy::Potential potential;
  SystemState initial;
  TargetSpec target;
};

RandomSystem random_system(std::mt19937_64& rng) {
  bias::NetConfig c = random_net_config(rng);
  c.dropout = 0.0;
  const bool mb = c.d == 2 && std::bernoulli_distribution(0.3)(rng);
  RandomSystem s{bias::BiasNetwork(c, rng()), {}, mb ? energy::Potential::muller_brown() : energy::Potential::double_well(), {}, {}};
  randomise(s.net, rng, 0.5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  s.params.mode = u(rng) < 0.5 ? dyn::Mode::Overdamped : dyn::Mode::Underdamped;
  s.params.gamma = 0.5 + 1.5 * u(rng);
  s.params.tau_start = 0.2 + u(rng);
  s.params.tau_end = 0.2 + u(rng);
  s.params.dt = mb ? 1e-4 + 4e-4 * u(rng) : 0.005 + 0.015 * u(rng);
  s.params.K = pick(rng, 3, 8);
  if (u(rng) < 0.5) {
    s.params.masses = Vec::Constant(static_cast<Eigen::Index>(c.n), 1.0);
    for (Eigen::Index i = 0; i < s.params.masses.size(); ++i) s.params.masses[i] = 0.5 + u(rng);
  }
  s.initial = random_state(c.n, c.d, rng, mb ? 0.5 : 1.5);
  s.initial.V.resize(0, 0);
  s.target.R_B = random_state(c.n, c.d, rng, mb ? 0.5 : 1.5).R;
  s.target.sigma = 0.1 + u(rng);
  return s;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << std::scientific << v;
  return ss.str();
}

}  // namespace

double gradcheck(Graph& graph, NodeId loss, ad::ParameterSet& leaves, const ad::Bindings& fixed,
                 const ad::EvalOptions& options, double h) {
  ad::Bindings b = fixed;
  for (auto& [name, t] : leaves) b.insert_or_assign(name, &t);
  graph.evaluate(loss, b, options);
  const ad::Gradients grads = graph.gradients(loss);
  double worst = 0.0;
  for (auto& [name, t] : leaves) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double keep = t[k];
      auto at = [&](double offset) {
        t[k] = keep + offset;
        return graph.evaluate(loss, b, options).item();
      };
      // five-point central stencil, O(h^4)
      auto stencil = [&](double step) {
        return (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
      };
      const double analytic = it->second[k];
      auto rel = [&](double numeric) {
        return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      };
      double numeric = stencil(h);
      if (rel(numeric) > 1e-6) {
        // near a sharp feature: shrink the step and keep the estimate where consecutive
        // steps agree best (chosen without looking at the analytic value)
        const double e1 = stencil(h / 10.0), e2 = stencil(h / 100.0);
        numeric = std::abs(numeric - e1) <= std::abs(e1 - e2) ? e1 : e2;
      }
      t[k] = keep;
      worst = std::max(worst, rel(numeric));
    }
  }
  return worst;
}

CheckResult gradcheck_primitives(std::size_t seeds, std::uint64_t base_seed) {
  const auto t0 = Clock::now();
  CheckResult r;
  r.name = "gradcheck-primitives";
  std::string worst_case;
  for (std::size_t s = 0; s < seeds; ++s) {
    for (int which = 0; which < kPrimitiveCases; ++which) {
      std::mt19937_64 rng(base_seed * 7919 + s * 131 + static_cast<std::uint64_t>(which));
      Graph g;
      ad::ParameterSet leaves;
      NodeId out = build_case(which, g, rng, leaves);
      ad::EvalOptions opts;
      opts.training = true;
      opts.dropout_seed = s;
      NodeId loss = weighted_loss(g, out, leaves, {}, opts, rng);
      const double err = gradcheck(g, loss, leaves, {}, opts);
      if (err > r.worst) {
        r.worst = err;
        worst_case = kCaseNames[which];
      }
    }
  }
  r.passed = r.worst < 1e-4;
  r.detail = std::to_string(kPrimitiveCases) + " ops x " + std::to_string(seeds) + " seeds, worst rel err " +
             fmt(r.worst) + (worst_case.empty() ? "" : " (" + worst_case + ")");
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult gradcheck_network(std::size_t seeds, std::uint64_t base_seed) {
  const auto t0 = Clock::now();
  CheckResult r;
  r.name = "gradcheck-network";
  for (std::size_t s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(base_seed * 104729 + s);
    const bias::NetConfig c = random_net_config(rng);
    bias::BiasNetwork net(c, rng());
    randomise(net, rng, 0.5);
    bias::BiasGraph bg = bias::build_bias_graph(c);
    const std::size_t B = pick(rng, 1, 2);
    std::vector<SystemState> states;
    std::vector<TargetSpec> targets(B);
    std::vector<const TargetSpec*> tp;
    for (std::size_t k = 0; k < B; ++k) {
      states.push_back(random_state(c.n, c.d, rng));
      targets[k].R_B = random_state(c.n, c.d, rng).R;
      if (k == 0 && c.n > 1) targets[k].R_B.row(0) = states[k].R.row(0);  // one coincident particle
      tp.push_back(&targets[k]);
    }
    const bias::BiasInputs inputs = bias::prepare_inputs(c, states, tp);
    ad::Bindings fixed;
    fixed.emplace("tokens", &inputs.tokens);
    fixed.emplace("s_hat", &inputs.s_hat);
    fixed.emplace("mask", &inputs.mask);
    ad::EvalOptions opts;
    opts.training = true;
    opts.dropout_seed = s;
    ad::ParameterSet leaves = net.params();
    NodeId loss = weighted_loss(bg.graph, bg.b, leaves, fixed, opts, rng);
    r.worst = std::max(r.worst, gradcheck(bg.graph, loss, leaves, fixed, opts));
  }
  r.passed = r.worst < 1e-4;
  r.detail = std::to_string(seeds) + " random networks, all parameters, worst rel err " + fmt(r.worst);
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult girsanov(std::size_t rollouts, std::uint64_t base_seed) {
  const auto t0 = Clock::now();
  CheckResult r;
  r.name = "girsanov";
  double worst_sum = 0.0, worst_recompute = 0.0, worst_fhat = 0.0;
  for (std::size_t s = 0; s < rollouts; ++s) {
    std::mt19937_64 rng(base_seed * 15485863 + s);
    RandomSystem sys = random_system(rng);
    const dyn::Trajectory t = dyn::rollout_one(&sys.net, sys.initial, sys.target, rng(), sys.params, sys.potential);
    double girsanov_sum = 0.0;
    for (Eigen::Index k = 0; k < t.noise.rows(); ++k) {
      girsanov_sum += t.behavior_bias.row(k).dot(t.noise.row(k)) + 0.5 * t.behavior_bias.row(k).squaredNorm() * t.dt;
    }
    worst_sum = std::max(worst_sum, std::abs((t.log_pb - t.log_p0) - girsanov_sum));
    const double lp0 = dyn::path_logdensity(t, Mat::Zero(t.noise.rows(), t.noise.cols()), sys.params, sys.potential);
    const double lpb = dyn::path_logdensity(t, t.behavior_bias, sys.params, sys.potential);
    worst_recompute = std::max({worst_recompute, std::abs(lp0 - t.log_p0), std::abs(lpb - t.log_pb)});
    worst_fhat = std::max(worst_fhat, std::abs(obj::f_hat(t, t.behavior_bias) + (t.log_pb - t.log_p0)));
  }
  r.worst = std::max({worst_sum, worst_recompute, worst_fhat});
  r.passed = r.worst < 1e-8;
  r.detail = std::to_string(rollouts) + " rollouts; |dlog - girsanov sum| " + fmt(worst_sum) + ", recompute " +
             fmt(worst_recompute) + ", f_hat(b_bar) " + fmt(worst_fhat);
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult ce_identity(std::size_t trajectories, std::uint64_t base_seed) {
  const auto t0 = Clock::now();
  CheckResult r;
  r.name = "ce-identity";
  double worst_graph = 0.0, worst_plain = 0.0;
  for (std::size_t s = 0; s < trajectories; ++s) {
    std::mt19937_64 rng(base_seed * 32452843 + s);
    RandomSystem sys = random_system(rng);
    const dyn::Trajectory t = dyn::rollout_one(&sys.net, sys.initial, sys.target, rng(), sys.params, sys.potential);
    // current parameters differ from the behaviour snapshot
    bias::BiasNetwork current = sys.net;
    randomise(current, rng, 0.3);

    bias::BiasEvaluator ev(current.config());
    Mat b_theta(t.noise.rows(), t.noise.cols());
    for (std::size_t k = 0; k < t.K; ++k) {
      const SystemState st = t.state(k);
      const TargetSpec* tp = &t.target;
      const Tensor& f = ev.forces(current, std::span<const SystemState>(&st, 1), std::span<const TargetSpec* const>(&tp, 1));
      b_theta.row(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::RowVectorXd>(f.raw(), static_cast<Eigen::Index>(f.size()));
    }
    const double rhs = t.reward + t.log_p0 - dyn::path_logdensity(t, b_theta, sys.params, sys.potential);

    obj::LossGraph lg(current.config(), obj::Objective::CrossEntropy);
    const dyn::Trajectory* tp = &t;
    const obj::LossResult lr = lg.run(current, std::span<const dyn::Trajectory* const>(&tp, 1), 0.0, {}, false);
    worst_graph = std::max(worst_graph, std::abs(lr.f_hat[0] + t.reward - rhs));
    worst_plain = std::max(worst_plain, std::abs(obj::f_hat(t, b_theta) + t.reward - rhs));
  }
  r.worst = std::max(worst_graph, worst_plain);
  r.passed = r.worst < 1e-8;
  r.detail = std::to_string(trajectories) + " trajectories; graph F_hat " + fmt(worst_graph) + ", direct F_hat " +
             fmt(worst_plain);
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult cone_constraint(std::size_t draws, std::uint64_t base_seed) {
  const auto t0 = Clock::now();
  CheckResult r;
  r.name = "cone-constraint";
  std::size_t violations = 0, done = 0, particles = 0;
  double worst_proj = 0.0, worst_alpha = 0.0, worst_unit = 0.0, worst_zero = 0.0;
  const std::size_t per_net = 100;
  for (std::size_t s = 0; done < draws; ++s) {
    std::mt19937_64 rng(base_seed * 49979687 + s);
    bias::NetConfig c = random_net_config(rng);
    c.dropout = 0.0;
    if (c.d >= 2 && c.n >= c.d && std::bernoulli_distribution(0.3)(rng)) c.md_mode = true;
    bias::BiasNetwork net(c, rng());
    randomise(net, rng, std::uniform_real_distribution<double>(0.1, 3.0)(rng));
    bias::BiasEvaluator ev(c);
    for (std::size_t k = 0; k < per_net && done < draws; ++k, ++done) {
      const SystemState st = random_state(c.n, c.d, rng, 3.0);
      TargetSpec tg;
      tg.R_B = random_state(c.n, c.d, rng, 3.0).R;
      const bool coincide = std::bernoulli_distribution(0.1)(rng) && !c.md_mode;
      if (coincide) tg.R_B.row(0) = st.R.row(0);
      bias::BiasOutput out;
      try {
        out = ev.compute(net, st, tg);
      } catch (const NumericError&) {
        continue;  // degenerate Kabsch input; not a cone question
      }
      for (Eigen::Index i = 0; i < out.b.rows(); ++i) {
        ++particles;
        const double snorm = out.s_hat.row(i).norm();
        if (snorm == 0.0) {
          worst_zero = std::max(worst_zero, out.b.row(i).cwiseAbs().maxCoeff());
          continue;
        }
        const double along = out.b.row(i).dot(out.s_hat.row(i));
        if (along < 0.0) ++violations;
        worst_unit = std::max(worst_unit, std::abs(snorm - 1.0));
        worst_alpha = std::max(worst_alpha, std::abs(along - out.alpha[i]));
        // the network's orthogonal part, relative to the size of what was projected
        const Eigen::RowVectorXd orth = out.b.row(i) - out.alpha[i] * out.s_hat.row(i);
        worst_proj = std::max(worst_proj, std::abs(orth.dot(out.s_hat.row(i))) / std::max(1.0, out.h.row(i).norm()));
      }
    }
  }
  r.worst = static_cast<double>(violations);
  r.passed = violations == 0 && worst_proj < 1e-12 && worst_alpha < 1e-10 && worst_unit < 1e-12 && worst_zero == 0.0;
  r.detail = std::to_string(done) + " draws (" + std::to_string(particles) + " particles), " + std::to_string(violations) +
             " violations, projector residual " + fmt(worst_proj) + ", |<b,s>-alpha| " + fmt(worst_alpha) +
             ", coincident |b| " + fmt(worst_zero);
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult step_bound(std::size_t draws, std::uint64_t base_seed) {
  const auto t0 = Clock::now();
  CheckResult r;
  r.name = "step-bound";
  std::mt19937_64 rng(base_seed * 86028121 + 17);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t increases = 0;
  double worst_ratio = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    const auto d = static_cast<Eigen::Index>(pick(rng, 1, 3));
    Eigen::RowVectorXd r0(d), s(d), h(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      r0[j] = 3.0 * normal(rng);
      s[j] = normal(rng);
      h[j] = 2.0 * normal(rng);
    }
    s.normalize();
    const double alpha = std::exp(3.0 * normal(rng));
    const double rho = std::exp(2.0 * normal(rng));
    const double m = 0.1 + 5.0 * u(rng);
    Vec a(1);
    a[0] = alpha;
    const Mat b = bias::assemble_bias(a, h, s);
    const double bound = 2.0 * m * alpha * rho / b.squaredNorm();
    const double dt = bound * u(rng);
    const Eigen::RowVectorXd goal = r0 + rho * s;
    const Eigen::RowVectorXd r1 = r0 + b.row(0) * dt / m;
    const double before = (goal - r0).norm(), after = (goal - r1).norm();
    if (after > before * (1.0 + 1e-12)) ++increases;
    worst_ratio = std::max(worst_ratio, after / before);
  }
  r.worst = static_cast<double>(increases);
  r.passed = increases == 0;
  r.detail = std::to_string(draws) + " draws, " + std::to_string(increases) + " distance increases, max after/before " +
             fmt(worst_ratio);
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult metric_oracles(std::size_t cases, std::uint64_t base_seed) {
  const auto t0 = Clock::now();
  CheckResult r;
  r.name = "metric-oracles";
  std::mt19937_64 rng(base_seed * 179424673 + 5);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto cloud = [&](std::size_t m, std::size_t d, double shift) {
    Mat X(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = normal(rng) + shift;
    return X;
  };
  const std::vector<double> bw{0.01, 0.1, 1.0, 10.0, 100.0};
  double worst_assign = 0.0, worst_self = 0.0, worst_sym = 0.0, worst_order = 0.0;
  std::size_t order_violations = 0, negative = 0;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t M = pick(rng, 1, 7), D = pick(rng, 1, 4);
    const Mat X = cloud(M, D, 0.0), Y = cloud(M, D, 0.5);
    for (int p : {1, 2}) {
      std::vector<std::size_t> perm(M);
      std::iota(perm.begin(), perm.end(), 0);
      double best = std::numeric_limits<double>::infinity();
      do {
        double cost = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
          const double d2 = (X.row(static_cast<Eigen::Index>(i)) - Y.row(static_cast<Eigen::Index>(perm[i]))).squaredNorm();
          cost += p == 1 ? std::sqrt(d2) : d2;
        }
        best = std::min(best, cost);
      } while (std::next_permutation(perm.begin(), perm.end()));
      best /= static_cast<double>(M);
      if (p == 2) best = std::sqrt(best);
      worst_assign = std::max(worst_assign, std::abs(metrics::wasserstein(X, Y, p) - best));
    }
    const std::size_t M2 = pick(rng, 1, 30), D2 = pick(rng, 1, 6);
    const Mat A = cloud(M2, D2, 0.0), B = cloud(M2, D2, normal(rng));
    worst_self = std::max(worst_self, metrics::rbf_mmd(A, A, bw));
    const double ab = metrics::rbf_mmd(A, B, bw), ba = metrics::rbf_mmd(B, A, bw);
    if (ab < 0.0) ++negative;
    worst_sym = std::max(worst_sym, std::abs(ab - ba));
    const double w1 = metrics::wasserstein(A, B, 1), w2 = metrics::wasserstein(A, B, 2);
    if (w1 > w2 + 1e-12) ++order_violations;
    worst_order = std::max(worst_order, w1 - w2);
  }
  r.worst = std::max({worst_assign, worst_self, worst_sym});
  r.passed = worst_assign < 1e-10 && worst_self < 1e-12 && worst_sym < 1e-12 && order_violations == 0 && negative == 0;
  r.detail = std::to_string(cases) + " cases; hungarian vs exhaustive " + fmt(worst_assign) + ", MMD(X,X) " +
             fmt(worst_self) + ", asymmetry " + fmt(worst_sym) + ", W1>W2 cases " + std::to_string(order_violations);
  r.seconds = seconds_since(t0);
  return r;
}

}  // namespace esbm::checks
