// SPDX-License-Identifier: Apache-2.0
#include "esbm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>

#include "esbm/error.hpp"
#include "esbm/io.hpp"

namespace esbm::train {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t z = a ^ (0x9E3779B97F4A7C15ULL * (b + 1)) ^ (0xC2B2AE3D27D4EB4FULL * (c + 1));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kEpisode = 1, kBatch = 2, kDropout = 3, kInit = 4, kInfer = 5 };

[[noreturn]] void rethrow_at(const Error& e, std::size_t r) {
  throw Error(e.kind(), "rollout " + std::to_string(r) + ": " + e.what());
}

}  // namespace

unsigned thread_count() {
  if (const char* env = std::getenv("ESBM_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

TrainInputs load_inputs(const TrainConfig& config) {
  TrainInputs in;
  switch (energy::parse_potential_kind(config.potential)) {
    case energy::PotentialKind::DoubleWell:
      in.potential = energy::Potential::double_well(config.dw_a, config.dw_b);
      break;
    case energy::PotentialKind::MullerBrown:
      in.potential = energy::Potential::muller_brown();
      break;
    case energy::PotentialKind::RbfManifold:
      if (config.manifold_path.empty()) throw InputError("config: rbf_manifold potential needs manifold_path");
      in.potential = energy::Potential::manifold(
          std::make_shared<const energy::RbfManifold>(energy::RbfManifold::load(config.manifold_path)));
      break;
  }
  if (config.initial_source.empty() || config.target_source.empty()) {
    throw InputError("config: initial_source and target_source are required");
  }
  in.initial = io::read_points_csv(config.initial_source);
  in.target = io::read_points_csv(config.target_source);
  return in;
}

Mat nn_cluster(const Mat& cloud, std::size_t seed_index, std::size_t n) {
  if (seed_index >= static_cast<std::size_t>(cloud.rows())) throw InputError("nn_cluster: seed index out of range");
  if (n > static_cast<std::size_t>(cloud.rows())) throw InputError("nn_cluster: cloud has fewer than n points");
  std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(cloud.rows()));
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    dist[static_cast<std::size_t>(i)] = {(cloud.row(i) - cloud.row(static_cast<Eigen::Index>(seed_index))).squaredNorm(), i};
  }
  // the seed itself has distance 0 and the smallest tie-break when duplicated
  dist[seed_index].first = -1.0;
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(n), dist.end());
  Mat out(static_cast<Eigen::Index>(n), cloud.cols());
  for (std::size_t k = 0; k < n; ++k) out.row(static_cast<Eigen::Index>(k)) = cloud.row(dist[k].second);
  return out;
}

Episode sample_episode(const TrainConfig& config, const TrainInputs& inputs, std::size_t count, std::uint64_t seed) {
  Episode ep;
  const auto n = static_cast<Eigen::Index>(config.n), d = static_cast<Eigen::Index>(config.d);
  if (inputs.initial.cols() != d || inputs.target.cols() != d) {
    throw ShapeError("sources have " + std::to_string(inputs.initial.cols()) + " and " +
                     std::to_string(inputs.target.cols()) + " columns, config d = " + std::to_string(d));
  }
  std::mt19937_64 rng(seed);
  for (std::size_t m = 0; m < count; ++m) {
    SystemState s;
    TargetSpec t;
    t.sigma = config.sigma;
    if (config.sampling_kind() == Sampling::Fixed) {
      if (inputs.initial.rows() != n || inputs.target.rows() != n) {
        throw ShapeError("fixed sampling needs exactly n rows in the initial and target sources");
      }
      s.R = inputs.initial;
      t.R_B = inputs.target;
    } else {
      std::uniform_int_distribution<Eigen::Index> pick_a(0, inputs.initial.rows() - 1);
      std::uniform_int_distribution<Eigen::Index> pick_b(0, inputs.target.rows() - 1);
      s.R = nn_cluster(inputs.initial, static_cast<std::size_t>(pick_a(rng)), config.n);
      t.R_B = nn_cluster(inputs.target, static_cast<std::size_t>(pick_b(rng)), config.n);
    }
    ep.initial.push_back(std::move(s));
    ep.targets.push_back(std::move(t));
    ep.seeds.push_back(mix(seed, m));
  }
  return ep;
}

Trainer::Trainer(TrainConfig config, TrainInputs inputs)
    : config_(std::move(config)),
      inputs_(std::move(inputs)),
      dyn_(config_.dynamics()),
      net_((config_.validate(), config_.net_config()), mix(config_.seed, kInit)),
      buffer_(config_.buffer_capacity),
      loss_(config_.net_config(), config_.objective_kind()),
      batch_rng_(mix(config_.seed, kBatch)),
      threads_(thread_count()) {
  adam_.lr = config_.lr;
  adam_w_.lr = config_.lv_w_lr;
  dyn_.validate(config_.n);
}

std::vector<dyn::Trajectory> Trainer::rollout_phase(std::size_t rollout_index) {
  const Episode ep = sample_episode(config_, inputs_, config_.M, mix(config_.seed, kEpisode, rollout_index));
  // every trajectory of the phase sees the same parameter snapshot
  const bias::BiasNetwork snapshot = net_;
  dyn::RolloutOptions opts;
  opts.threads = threads_;
  return dyn::rollout(&snapshot, ep.initial, ep.targets, ep.seeds, dyn_, inputs_.potential, opts);
}

double Trainer::train_step(std::span<const dyn::Trajectory* const> batch, std::uint64_t dropout_seed) {
  ad::EvalOptions opts;
  opts.training = config_.dropout > 0.0;
  opts.dropout_seed = dropout_seed;
  const bool lv = config_.objective_kind() == obj::Objective::LogVariance;
  if (lv && !lv_w_initialised_) {
    // start the control variate at its optimum for the first batch
    const obj::LossResult probe = loss_.run(net_, batch, 0.0, ad::EvalOptions{}, false);
    double g = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) g += probe.f_hat[i] + batch[i]->reward;
    lv_w_ = g / static_cast<double>(batch.size());
    lv_w_initialised_ = true;
  }
  obj::LossResult res = loss_.run(net_, batch, lv_w_, opts);
  if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");
  ad::Gradients grads = std::move(res.grads);
  if (lv) {
    ad::ParameterSet w{{"lv.w", ad::Tensor::scalar(lv_w_)}};
    ad::Gradients gw{{"lv.w", grads.at("lv.w")}};
    grads.erase("lv.w");
    ad::clip_global_norm(grads, config_.grad_clip);
    ad::adam_step(net_.params(), grads, adam_);
    ad::adam_step(w, gw, adam_w_);
    lv_w_ = w.at("lv.w").item();
  } else {
    ad::clip_global_norm(grads, config_.grad_clip);
    ad::adam_step(net_.params(), grads, adam_);
  }
  return res.loss;
}

std::vector<double> Trainer::train_phase(std::size_t rollout_index) {
  std::vector<double> losses;
  losses.reserve(config_.n_epochs);
  for (std::size_t e = 0; e < config_.n_epochs; ++e) {
    const std::vector<const buffer::Entry*> picked = buffer_.sample(config_.batch_size, batch_rng_);
    std::vector<const dyn::Trajectory*> batch;
    batch.reserve(picked.size());
    for (const buffer::Entry* p : picked) batch.push_back(&p->trajectory);
    losses.push_back(train_step(batch, mix(config_.seed, kDropout, rollout_index * 1000003ULL + e)));
  }
  return losses;
}

TrainReport Trainer::run(const std::filesystem::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir / "checkpoints");
  for (std::size_t r = 0; r < config_.n_rollouts; ++r) {
    try {
      std::vector<dyn::Trajectory> trajs = rollout_phase(r);
      double reward = 0.0;
      for (const auto& t : trajs) reward += t.reward;
      report.mean_reward.push_back(reward / static_cast<double>(trajs.size()));
      for (auto& t : trajs) buffer_.push(std::move(t));
      const std::vector<double> losses = train_phase(r);
      report.loss.push_back(losses.empty() ? 0.0
                                           : std::accumulate(losses.begin(), losses.end(), 0.0) /
                                                 static_cast<double>(losses.size()));
    } catch (const Error& e) {
      rethrow_at(e, r);
    }
    if (!out_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "rollout_%04zu.ckpt", r);
      net_.save(out_dir / "checkpoints" / name);
    }
  }
  if (!out_dir.empty()) {
    report.checkpoint = out_dir / "model.ckpt";
    net_.save(report.checkpoint);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::vector<dyn::Trajectory> infer(const bias::BiasNetwork& net, std::span<const SystemState> initial,
                                   std::span<const TargetSpec> targets, const dyn::DynamicsParams& params,
                                   const energy::Potential& potential, std::uint64_t seed) {
  for (const SystemState& s : initial) {
    if (s.n() != net.config().n || s.d() != net.config().d) {
      throw ShapeError("infer: state is " + std::to_string(s.n()) + "x" + std::to_string(s.d()) + ", checkpoint expects " +
                       std::to_string(net.config().n) + "x" + std::to_string(net.config().d));
    }
  }
  std::vector<std::uint64_t> seeds(initial.size());
  for (std::size_t m = 0; m < seeds.size(); ++m) seeds[m] = mix(seed, kInfer, m);
  dyn::RolloutOptions opts;
  opts.threads = thread_count();
  return dyn::rollout(&net, initial, targets, seeds, params, potential, opts);
}

}  // namespace esbm::train
