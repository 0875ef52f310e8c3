// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "esbm/dynamics.hpp"
#include "esbm/error.hpp"
#include "esbm/objective.hpp"

namespace esbm::dyn {

namespace {

void put_row(Mat& dst, std::size_t k, const Mat& src) {
  dst.row(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::RowVectorXd>(src.data(), src.size());
}

Trajectory start(const SystemState& initial, const TargetSpec& target, std::uint64_t seed, const DynamicsParams& p) {
  Trajectory t;
  t.n = initial.n();
  t.d = initial.d();
  t.K = p.K;
  t.mode = p.mode;
  t.dt = p.dt;
  const auto nd = static_cast<Eigen::Index>(t.n * t.d);
  const auto K = static_cast<Eigen::Index>(p.K);
  t.R.resize(K + 1, nd);
  t.V.resize(K + 1, nd);
  t.noise.resize(K, nd);
  t.behavior_bias.resize(K, nd);
  t.sigma.resize(K, static_cast<Eigen::Index>(t.n));
  t.target = target;
  t.seed = seed;
  return t;
}

void check_inputs(const SystemState& initial, const TargetSpec& target, const DynamicsParams& params,
                  const energy::Potential& potential) {
  if (initial.R.rows() == 0 || initial.R.cols() == 0) throw ShapeError("rollout: empty initial state");
  if (target.R_B.rows() != initial.R.rows() || target.R_B.cols() != initial.R.cols()) {
    throw ShapeError("rollout: target shape does not match the initial state");
  }
  if (potential.dim() != 0 && potential.dim() != initial.d()) throw ShapeError("rollout: potential dimension mismatch");
  params.validate(initial.n());
}

// Initial velocities: drift for overdamped, Maxwell-Boltzmann at tau_start otherwise.
SystemState init_state(const SystemState& initial, const DynamicsParams& p, const energy::Potential& potential,
                       std::mt19937_64& rng) {
  SystemState s;
  s.R = initial.R;
  s.t_index = 0;
  if (p.mode == Mode::Overdamped) {
    s.V = drift(potential, s.R, p);
  } else if (initial.V.rows() == initial.R.rows() && initial.V.cols() == initial.R.cols()) {
    s.V = initial.V;
  } else {
    s.V.resize(s.R.rows(), s.R.cols());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < s.V.rows(); ++i) {
      const double sd = std::sqrt(p.k_B * p.tau_start / p.mass(static_cast<std::size_t>(i)));
      for (Eigen::Index j = 0; j < s.V.cols(); ++j) s.V(i, j) = sd * normal(rng);
    }
  }
  return s;
}

// Records step k and advances; returns the new state.
SystemState advance(Trajectory& t, const SystemState& cur, const Mat& f, const Mat& u, std::size_t k,
                    const DynamicsParams& p, const energy::Potential& potential, std::mt19937_64& rng) {
  Mat dW;
  SystemState next = step(cur, f, u, p, k, rng, dW);
  const Vec sig = sigma_vector(p, k, t.n);
  const Mat mean_b = transition_mean(cur, f, u, p, k);
  const Mat mean_0 = transition_mean(cur, f, Mat::Zero(u.rows(), u.cols()), p, k);
  const Mat& x1 = noisy_channel(next, p.mode);
  t.log_pb += transition_logdensity(x1, mean_b, sig, p.dt);
  t.log_p0 += transition_logdensity(x1, mean_0, sig, p.dt);
  if (p.mode == Mode::Overdamped) next.V = drift(potential, next.R, p);
  put_row(t.noise, k, dW);
  put_row(t.behavior_bias, k, u);
  t.sigma.row(static_cast<Eigen::Index>(k)) = sig.transpose();
  put_row(t.R, k + 1, next.R);
  put_row(t.V, k + 1, next.V);
  return next;
}

void finish(Trajectory& t) {
  t.reward = obj::terminal_reward(t.positions(t.K), t.target);
  if (!t.valid()) throw NumericError("rollout produced a non-finite trajectory (seed " + std::to_string(t.seed) + ")");
}

void rollout_chunk(const bias::BiasNetwork* net, std::span<const SystemState> initial,
                   std::span<const TargetSpec> targets, std::span<const std::uint64_t> seeds,
                   const DynamicsParams& p, const energy::Potential& potential, std::span<Trajectory> out) {
  const std::size_t M = initial.size();
  std::vector<std::mt19937_64> rngs;
  std::vector<SystemState> cur(M);
  std::vector<const TargetSpec*> tptr(M);
  for (std::size_t m = 0; m < M; ++m) {
    check_inputs(initial[m], targets[m], p, potential);
    rngs.emplace_back(seeds[m]);
    out[m] = start(initial[m], targets[m], seeds[m], p);
    cur[m] = init_state(initial[m], p, potential, rngs[m]);
    put_row(out[m].R, 0, cur[m].R);
    put_row(out[m].V, 0, cur[m].V);
    tptr[m] = &targets[m];
  }
  std::optional<bias::BiasEvaluator> ev;
  if (net) ev.emplace(net->config());
  for (std::size_t k = 0; k < p.K; ++k) {
    const ad::Tensor* forces = nullptr;
    if (ev) forces = &ev->forces(*net, cur, tptr);
    for (std::size_t m = 0; m < M; ++m) {
      const auto n = static_cast<Eigen::Index>(cur[m].n()), d = static_cast<Eigen::Index>(cur[m].d());
      Mat u = Mat::Zero(n, d);
      if (forces) u = Eigen::Map<const Mat>(forces->raw() + m * n * d, n, d);
      // overdamped states carry the drift at their own positions as V
      const Mat f = p.mode == Mode::Overdamped ? cur[m].V : drift(potential, cur[m].R, p);
      cur[m] = advance(out[m], cur[m], f, u, k, p, potential, rngs[m]);
    }
  }
  for (std::size_t m = 0; m < M; ++m) finish(out[m]);
}

}  // namespace

SystemState Trajectory::state(std::size_t k) const {
  SystemState s;
  s.R = positions(k);
  s.V = row_block(V, k);
  s.t_index = k;
  return s;
}

Mat Trajectory::positions(std::size_t k) const { return row_block(R, k); }

Mat Trajectory::row_block(const Mat& m, std::size_t k) const {
  if (k >= static_cast<std::size_t>(m.rows())) throw ShapeError("trajectory step index out of range");
  return Eigen::Map<const Mat>(m.data() + k * n * d, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
}

bool Trajectory::valid() const {
  const auto nd = static_cast<Eigen::Index>(n * d);
  const auto k = static_cast<Eigen::Index>(K);
  if (R.rows() != k + 1 || V.rows() != k + 1 || noise.rows() != k || behavior_bias.rows() != k || sigma.rows() != k) return false;
  if (R.cols() != nd || V.cols() != nd || noise.cols() != nd || behavior_bias.cols() != nd) return false;
  if (target.R_B.rows() != static_cast<Eigen::Index>(n) || target.R_B.cols() != static_cast<Eigen::Index>(d)) return false;
  return R.allFinite() && V.allFinite() && noise.allFinite() && behavior_bias.allFinite() && sigma.allFinite() &&
         std::isfinite(log_p0) && std::isfinite(log_pb) && std::isfinite(reward);
}

std::vector<Trajectory> rollout(const bias::BiasNetwork* net, std::span<const SystemState> initial,
                                std::span<const TargetSpec> targets, std::span<const std::uint64_t> seeds,
                                const DynamicsParams& params, const energy::Potential& potential,
                                const RolloutOptions& options) {
  if (initial.size() != targets.size() || initial.size() != seeds.size()) {
    throw ShapeError("rollout: initial states, targets and seeds differ in count");
  }
  const std::size_t M = initial.size();
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  const std::size_t n_chunks = (M + chunk - 1) / chunk;
  std::vector<Trajectory> out(M);
  auto run = [&](std::size_t c) {
    const std::size_t lo = c * chunk, len = std::min(chunk, M - lo);
    rollout_chunk(net, initial.subspan(lo, len), targets.subspan(lo, len), seeds.subspan(lo, len), params, potential,
                  std::span<Trajectory>(out).subspan(lo, len));
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(n_chunks)));
  if (threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run(c);
    return out;
  }
  std::vector<std::exception_ptr> errors(n_chunks);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t c = w; c < n_chunks; c += threads) {
        try {
          run(c);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

Trajectory rollout_one(const bias::BiasNetwork* net, const SystemState& initial, const TargetSpec& target,
                       std::uint64_t seed, const DynamicsParams& params, const energy::Potential& potential) {
  return std::move(rollout(net, std::span<const SystemState>(&initial, 1), std::span<const TargetSpec>(&target, 1),
                           std::span<const std::uint64_t>(&seed, 1), params, potential)
                       .front());
}

Trajectory rollout_with_control(const ControlFn& control, const SystemState& initial, const TargetSpec& target,
                                std::uint64_t seed, const DynamicsParams& params, const energy::Potential& potential) {
  check_inputs(initial, target, params, potential);
  std::mt19937_64 rng(seed);
  Trajectory t = start(initial, target, seed, params);
  SystemState cur = init_state(initial, params, potential, rng);
  put_row(t.R, 0, cur.R);
  put_row(t.V, 0, cur.V);
  for (std::size_t k = 0; k < params.K; ++k) {
    const Mat u = control(cur, k);
    const Mat f = params.mode == Mode::Overdamped ? cur.V : drift(potential, cur.R, params);
    cur = advance(t, cur, f, u, k, params, potential, rng);
  }
  finish(t);
  return t;
}

double path_logdensity(const Trajectory& traj, const Mat& ctrl, const DynamicsParams& params,
                       const energy::Potential& potential) {
  if (ctrl.rows() != static_cast<Eigen::Index>(traj.K) || ctrl.cols() != traj.noise.cols()) {
    throw ShapeError("path_logdensity: control array shape mismatch");
  }
  double lp = 0.0;
  for (std::size_t k = 0; k < traj.K; ++k) {
    const SystemState s = traj.state(k);
    const SystemState s1 = traj.state(k + 1);
    const Mat f = drift(potential, s.R, params);
    const Mat u = traj.row_block(ctrl, k);
    const Mat mean = transition_mean(s, f, u, params, k);
    lp += transition_logdensity(noisy_channel(s1, params.mode), mean, sigma_vector(params, k, traj.n), params.dt);
  }
  return lp;
}

double reconstruction_error(const Trajectory& traj, const DynamicsParams& params, const energy::Potential& potential) {
  double err = 0.0;
  SystemState cur = traj.state(0);
  for (std::size_t k = 0; k < traj.K; ++k) {
    const Mat f = drift(potential, cur.R, params);
    SystemState next = step(cur, f, traj.row_block(traj.behavior_bias, k), params, k, traj.row_block(traj.noise, k));
    if (params.mode == Mode::Overdamped) next.V = drift(potential, next.R, params);
    err = std::max(err, (next.R - traj.positions(k + 1)).cwiseAbs().maxCoeff());
    err = std::max(err, (next.V - traj.row_block(traj.V, k + 1)).cwiseAbs().maxCoeff());
    cur = std::move(next);
  }
  return err;
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << "step,particle";
  for (std::size_t j = 0; j < traj.d; ++j) out << ",x" << j;
  for (std::size_t j = 0; j < traj.d; ++j) out << ",v" << j;
  out << '\n';
  char buf[32];
  for (std::size_t k = 0; k <= traj.K; ++k) {
    for (std::size_t i = 0; i < traj.n; ++i) {
      out << k << ',' << i;
      for (const Mat* m : {&traj.R, &traj.V}) {
        for (std::size_t j = 0; j < traj.d; ++j) {
          std::snprintf(buf, sizeof buf, "%.17g", (*m)(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i * traj.d + j)));
          out << ',' << buf;
        }
      }
      out << '\n';
    }
  }
  if (!out) throw InputError("write failed for " + path.string());
}

std::vector<SystemState> read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trajectory " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("step,particle", 0) != 0) {
    throw InputError(path.string() + ": missing trajectory header");
  }
  std::size_t cols = 0;
  for (char c : line) cols += c == ',' ? 1 : 0;
  cols += 1;
  if (cols < 4 || (cols - 2) % 2 != 0) throw InputError(path.string() + ": malformed trajectory header");
  const std::size_t d = (cols - 2) / 2;
  std::map<std::size_t, std::map<std::size_t, std::vector<double>>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw InputError(path.string() + ":" + std::to_string(lineno) + ": non-numeric field '" + cell + "'");
      }
    }
    if (vals.size() != cols) throw InputError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    rows[static_cast<std::size_t>(vals[0])][static_cast<std::size_t>(vals[1])] =
        std::vector<double>(vals.begin() + 2, vals.end());
  }
  std::vector<SystemState> states;
  for (const auto& [k, parts] : rows) {
    SystemState s;
    const auto n = static_cast<Eigen::Index>(parts.size());
    s.R.resize(n, static_cast<Eigen::Index>(d));
    s.V.resize(n, static_cast<Eigen::Index>(d));
    Eigen::Index i = 0;
    for (const auto& [idx, v] : parts) {
      for (std::size_t j = 0; j < d; ++j) {
        s.R(i, static_cast<Eigen::Index>(j)) = v[j];
        s.V(i, static_cast<Eigen::Index>(j)) = v[d + j];
      }
      ++i;
    }
    s.t_index = k;
    states.push_back(std::move(s));
  }
  if (states.empty()) throw InputError(path.string() + ": no trajectory rows");
  return states;
}

}  // namespace esbm::dyn
