// SPDX-License-Identifier: Apache-2.0
// esbm: fit landscapes, train bias networks, sample paths and score them.
#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "esbm/checkpoint.hpp"
#include "esbm/checks.hpp"
#include "esbm/error.hpp"
#include "esbm/io.hpp"
#include "esbm/metrics.hpp"
#include "esbm/synth.hpp"
#include "esbm/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace esbm;

namespace {

constexpr int kOk = 0, kCheckFailed = 1, kUsage = 2, kNumeric = 3;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Owns a run directory for the lifetime of one command: holds the lockfile and
// writes the manifest on success.
class RunDir {
 public:
  RunDir(fs::path dir, std::string command) : dir_(std::move(dir)), started_(utc_now()) {
    manifest_["command"] = std::move(command);
    fs::create_directories(dir_);
    lock_ = dir_ / ".lock";
    const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw StateError("run directory " + dir_.string() + " is locked by another command (" + lock_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto w = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunDir() {
    std::error_code ec;
    fs::remove(lock_, ec);
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const fs::path& dir() const { return dir_; }
  json& manifest() { return manifest_; }
  void input(const fs::path& p) { inputs_[p.string()] = io::git_blob_sha1_file(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  void finish() {
    manifest_["inputs"] = inputs_;
    json out = json::object();
    for (const fs::path& p : outputs_) out[fs::relative(p, dir_).generic_string()] = io::git_blob_sha1_file(p);
    manifest_["outputs"] = out;
    manifest_["started"] = started_;
    manifest_["finished"] = utc_now();
    std::ofstream f(dir_ / "manifest.json", std::ios::trunc);
    f << manifest_.dump(2) << "\n";
    if (!f) throw InputError("cannot write " + (dir_ / "manifest.json").string());
  }

 private:
  fs::path dir_, lock_;
  std::string started_;
  json manifest_;
  json inputs_ = json::object();
  std::vector<fs::path> outputs_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  f << text;
  if (!f) throw InputError("cannot write " + path.string());
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---- fit-manifold ---------------------------------------------------------

struct FitArgs {
  std::string data, out;
  energy::RbfFitOptions opts;
};

int cmd_fit_manifold(const FitArgs& a) {
  const Mat data = io::read_points_csv(a.data);
  RunDir run(a.out, "fit-manifold");
  run.input(a.data);
  const energy::RbfFitResult fit = energy::fit_rbf_manifold(data, a.opts);
  if (!std::isfinite(fit.residual)) throw NumericError("fit-manifold: residual is not finite");
  const fs::path ckpt = run.dir() / "manifold.ckpt";
  fit.manifold.save(ckpt);
  run.output(ckpt);

  json report;
  report["points"] = data.rows();
  report["dim"] = data.cols();
  report["n_centers"] = a.opts.n_centers;
  report["kappa"] = a.opts.kappa;
  report["residual"] = fit.residual;
  report["nonnegative_refit"] = fit.nonnegative_refit;
  report["kmeans_restarts"] = fit.kmeans_restarts;
  write_text(run.dir() / "fit.json", report.dump(2) + "\n");
  run.output(run.dir() / "fit.json");

  run.manifest()["seed"] = a.opts.seed;
  run.manifest()["settings"] = {{"n_centers", a.opts.n_centers}, {"kappa", a.opts.kappa}, {"eps", a.opts.eps},
                                {"alpha", a.opts.alpha}};
  run.finish();
  std::cout << "residual " << io::format_double(fit.residual) << (fit.nonnegative_refit ? " (nonnegative refit)" : "")
            << "\n";
  return kOk;
}

// ---- train / simulate config handling -------------------------------------

struct ConfigArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

train::TrainConfig resolve_config(const ConfigArgs& a) {
  train::TrainConfig c = a.config.empty() ? train::TrainConfig{} : train::load_config(a.config);
  for (const std::string& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InputError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    c.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (a.seed) c.seed = *a.seed;
  c.validate();
  return c;
}

void record_data_inputs(RunDir& run, const ConfigArgs& a, const train::TrainConfig& c) {
  if (!a.config.empty()) run.input(a.config);
  for (const std::string& p : {c.initial_source, c.target_source, c.manifold_path}) {
    if (!p.empty()) run.input(p);
  }
  run.manifest()["seed"] = c.seed;
  run.manifest()["config"] = c.to_text();
}

int cmd_train(const ConfigArgs& a, const std::string& out) {
  const train::TrainConfig c = resolve_config(a);
  RunDir run(out, "train");
  record_data_inputs(run, a, c);
  write_text(run.dir() / "config.txt", c.to_text());
  run.output(run.dir() / "config.txt");

  train::Trainer trainer(c, train::load_inputs(c));
  const train::TrainReport rep = trainer.run(run.dir());

  std::ostringstream csv;
  csv << "rollout,loss,mean_reward\n";
  for (std::size_t r = 0; r < rep.loss.size(); ++r) {
    csv << r << "," << io::format_double(rep.loss[r]) << "," << io::format_double(rep.mean_reward[r]) << "\n";
  }
  write_text(run.dir() / "loss.csv", csv.str());
  run.output(run.dir() / "loss.csv");
  std::vector<fs::path> ckpts;
  for (const auto& e : fs::directory_iterator(run.dir() / "checkpoints")) ckpts.push_back(e.path());
  std::sort(ckpts.begin(), ckpts.end());
  for (const fs::path& p : ckpts) run.output(p);
  run.output(rep.checkpoint);
  run.output(rep.checkpoint.string() + ".json");
  run.finish();
  std::cout << "trained " << rep.loss.size() << " rollouts in " << rep.wall_seconds << " s; final mean reward "
            << (rep.mean_reward.empty() ? 0.0 : rep.mean_reward.back()) << "\n";
  return kOk;
}

// ---- simulate -------------------------------------------------------------

struct SimArgs {
  ConfigArgs cfg;
  std::string checkpoint, init, target, out;
  bool base = false;
  std::size_t M = 0;
};

int cmd_simulate(const SimArgs& a) {
  train::TrainConfig c = resolve_config(a.cfg);
  if (!a.init.empty()) c.initial_source = a.init;
  if (!a.target.empty()) c.target_source = a.target;
  if (a.checkpoint.empty() == !a.base) throw InputError("simulate: give exactly one of --checkpoint or --base");

  std::optional<bias::BiasNetwork> net;
  if (!a.base) {
    net = bias::BiasNetwork::load(a.checkpoint);
    const bias::NetConfig& nc = net->config();
    if (nc.n != c.n || nc.d != c.d) {
      throw InputError("simulate: checkpoint is for n=" + std::to_string(nc.n) + ", d=" + std::to_string(nc.d) +
                       " but the config has n=" + std::to_string(c.n) + ", d=" + std::to_string(c.d));
    }
  }
  const train::TrainInputs inputs = train::load_inputs(c);
  const std::size_t M = a.M ? a.M : c.M;

  RunDir run(a.out, "simulate");
  record_data_inputs(run, a.cfg, c);
  if (net) {
    run.input(a.checkpoint);
    run.input(a.checkpoint + ".json");
  }

  const train::Episode ep = train::sample_episode(c, inputs, M, c.seed);
  const dyn::DynamicsParams params = c.dynamics();
  std::vector<dyn::Trajectory> trajs;
  if (net) {
    trajs = train::infer(*net, ep.initial, ep.targets, params, inputs.potential, c.seed);
  } else {
    dyn::RolloutOptions opts;
    opts.threads = train::thread_count();
    trajs = dyn::rollout(nullptr, ep.initial, ep.targets, ep.seeds, params, inputs.potential, opts);
  }

  const auto n = static_cast<Eigen::Index>(c.n), d = static_cast<Eigen::Index>(c.d);
  Mat endpoints(static_cast<Eigen::Index>(M) * n, d), targets(static_cast<Eigen::Index>(M) * n, d);
  json per = json::array();
  for (std::size_t m = 0; m < trajs.size(); ++m) {
    char name[32];
    std::snprintf(name, sizeof name, "traj_%04zu.csv", m);
    dyn::write_trajectory_csv(run.dir() / name, trajs[m]);
    run.output(run.dir() / name);
    endpoints.middleRows(static_cast<Eigen::Index>(m) * n, n) = trajs[m].positions(c.K);
    targets.middleRows(static_cast<Eigen::Index>(m) * n, n) = trajs[m].target.R_B;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k <= c.K; ++k) peak = std::max(peak, inputs.potential.system(trajs[m].positions(k), nullptr));
    per.push_back({{"file", name}, {"reward", trajs[m].reward}, {"max_energy", peak}});
  }
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < d; ++j) header.push_back("x" + std::to_string(j));
  io::write_points_csv(run.dir() / "endpoints.csv", endpoints, header);
  io::write_points_csv(run.dir() / "targets.csv", targets, header);
  run.output(run.dir() / "endpoints.csv");
  run.output(run.dir() / "targets.csv");

  json sim;
  sim["M"] = M;
  sim["n"] = c.n;
  sim["d"] = c.d;
  sim["K"] = c.K;
  sim["biased"] = net.has_value();
  sim["trajectories"] = per;
  write_text(run.dir() / "simulation.json", sim.dump(2) + "\n");
  run.output(run.dir() / "simulation.json");
  run.finish();
  std::cout << "wrote " << M << " trajectories to " << run.dir().string() << "\n";
  return kOk;
}

// ---- evaluate -------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> generated;
  std::string reference, out;
  std::string metrics = "mmd,w1,w2";
  std::size_t w_dims = 2;
  double thp_radius = 0.75;
  std::string cv;
  std::uint64_t seed = 0;
};

int cmd_evaluate(const EvalArgs& a) {
  const std::vector<std::string> wanted = split(a.metrics, ',');
  const std::vector<std::string> known = {"mmd", "w1", "w2", "thp", "rmsd", "ets"};
  for (const std::string& m : wanted) {
    if (std::find(known.begin(), known.end(), m) == known.end()) throw InputError("evaluate: unknown metric '" + m + "'");
  }
  if (wanted.empty()) throw InputError("evaluate: empty metric list");
  auto has = [&](const char* m) { return std::find(wanted.begin(), wanted.end(), m) != wanted.end(); };
  const bool needs_reference = has("mmd") || has("w1") || has("w2");
  if (needs_reference && a.reference.empty()) throw InputError("evaluate: --reference is required for mmd/w1/w2");

  metrics::MetricsConfig mc;
  mc.thp_radius = a.thp_radius;
  mc.wasserstein_dims = a.w_dims;
  for (const std::string& s : split(a.cv, ',')) mc.cv.push_back(std::stoul(s));

  const Mat reference = needs_reference ? io::read_points_csv(a.reference) : Mat();
  RunDir run(a.out, "evaluate");
  if (needs_reference) run.input(a.reference);

  std::map<std::string, std::vector<double>> values;
  for (std::size_t r = 0; r < a.generated.size(); ++r) {
    const fs::path dir = a.generated[r];
    if (!fs::exists(dir / "endpoints.csv") || !fs::exists(dir / "simulation.json")) {
      throw InputError("evaluate: " + dir.string() + " holds no simulated trajectories");
    }
    run.input(dir / "endpoints.csv");
    const Mat endpoints = io::read_points_csv(dir / "endpoints.csv");
    if (endpoints.rows() == 0) throw InputError("evaluate: " + dir.string() + " holds no simulated trajectories");
    std::mt19937_64 rng(a.seed + r);
    if (needs_reference) {
      if (reference.cols() != endpoints.cols()) throw ShapeError("evaluate: reference and endpoints differ in dimension");
      const auto [X, Y] = metrics::equalize(endpoints, reference, metrics::kMaxAssignment, rng);
      if (has("mmd")) values["mmd"].push_back(metrics::rbf_mmd(X, Y, mc.mmd_bandwidths));
      if (has("w1")) values["w1"].push_back(metrics::wasserstein(X, Y, 1, mc.wasserstein_dims));
      if (has("w2")) values["w2"].push_back(metrics::wasserstein(X, Y, 2, mc.wasserstein_dims));
    }
    if (has("thp") || has("rmsd") || has("ets")) {
      run.input(dir / "targets.csv");
      run.input(dir / "simulation.json");
      const Mat targets = io::read_points_csv(dir / "targets.csv");
      const json sim = json::parse(io::read_file(dir / "simulation.json"));
      const auto n = sim.at("n").get<Eigen::Index>(), d = sim.at("d").get<Eigen::Index>();
      const auto M = sim.at("M").get<std::size_t>();
      if (targets.rows() != endpoints.rows() || endpoints.rows() != static_cast<Eigen::Index>(M) * n) {
        throw ShapeError("evaluate: endpoints, targets and simulation.json disagree in " + dir.string());
      }
      std::vector<Mat> ends, tgts;
      for (std::size_t m = 0; m < M; ++m) {
        ends.push_back(endpoints.middleRows(static_cast<Eigen::Index>(m) * n, n));
        tgts.push_back(targets.middleRows(static_cast<Eigen::Index>(m) * n, n));
      }
      if (has("thp")) values["thp"].push_back(metrics::thp(ends, tgts, mc));
      if (has("rmsd")) {
        // rigid alignment only where it is defined: 2-D or 3-D with enough particles
        const bool align = (d == 2 || d == 3) && n >= d;
        double sum = 0.0;
        for (std::size_t m = 0; m < M; ++m) sum += metrics::rmsd(ends[m], tgts[m], {}, align);
        values["rmsd"].push_back(sum / static_cast<double>(M));
      }
      if (has("ets")) {
        const json& per = sim.at("trajectories");
        double sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t m = 0; m < M; ++m) {
          if (metrics::cv_distance(ends[m], tgts[m], mc.cv) < mc.thp_radius) {
            sum += per.at(m).at("max_energy").get<double>();
            ++hits;
          }
        }
        if (hits) values["ets"].push_back(sum / static_cast<double>(hits));
      }
    }
  }

  json report;
  report["repeats"] = a.generated.size();
  json mj = json::object();
  for (const std::string& m : wanted) {
    const std::vector<double>& v = values[m];
    const metrics::Summary s = metrics::summarize(v);
    mj[m] = {{"mean", v.empty() ? json(nullptr) : json(s.mean)}, {"std", v.empty() ? json(nullptr) : json(s.stddev)},
             {"values", v}};
  }
  report["metrics"] = mj;
  const fs::path path = run.dir() / "metrics.json";
  write_text(path, report.dump(2) + "\n");
  run.output(path);
  run.manifest()["seed"] = a.seed;
  run.finish();
  for (const std::string& m : wanted) {
    std::cout << m << " " << (values[m].empty() ? std::string("n/a") : io::format_double(metrics::summarize(values[m]).mean))
              << "\n";
  }
  return kOk;
}

// ---- selfcheck ------------------------------------------------------------

struct SelfArgs {
  bool quick = false;
  std::string checkpoint;
  std::uint64_t seed = 0;
};

checks::CheckResult check_checkpoint(const std::string& path) {
  checks::CheckResult r;
  r.name = "checkpoint";
  try {
    const bias::BiasNetwork net = bias::BiasNetwork::load(path);
    const bias::NetConfig& c = net.config();
    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal(0.0, 1.0);
    SystemState s;
    s.R.resize(static_cast<Eigen::Index>(c.n), static_cast<Eigen::Index>(c.d));
    s.V.resize(s.R.rows(), s.R.cols());
    TargetSpec t;
    t.R_B.resize(s.R.rows(), s.R.cols());
    for (Eigen::Index k = 0; k < s.R.size(); ++k) {
      s.R.data()[k] = normal(rng);
      s.V.data()[k] = normal(rng);
      t.R_B.data()[k] = normal(rng);
    }
    const bias::BiasOutput out = bias::compute_bias(net, s, t);
    r.passed = out.b.allFinite();
    r.detail = r.passed ? "loads, outputs finite" : "non-finite bias output";
  } catch (const std::exception& e) {
    r.detail = e.what();
  }
  return r;
}

int cmd_selfcheck(const SelfArgs& a) {
  const std::size_t scale = a.quick ? 10 : 1;
  std::vector<std::function<checks::CheckResult()>> suites = {
      [&] { return checks::gradcheck_primitives(100 / scale, a.seed); },
      [&] { return checks::gradcheck_network(100 / scale, a.seed); },
      [&] { return checks::girsanov(200 / scale, a.seed); },
      [&] { return checks::ce_identity(200 / scale, a.seed); },
      [&] { return checks::cone_constraint(10000 / scale, a.seed); },
      [&] { return checks::step_bound(10000 / scale, a.seed); },
      [&] { return checks::metric_oracles(1000 / scale, a.seed); },
  };
  if (!a.checkpoint.empty()) suites.push_back([&] { return check_checkpoint(a.checkpoint); });
  std::vector<std::string> failed;
  for (const auto& suite : suites) {
    const checks::CheckResult r = suite();
    std::printf("%-22s %s  %s (%.1f s)\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.detail.c_str(), r.seconds);
    std::fflush(stdout);
    if (!r.passed) failed.push_back(r.name);
  }
  if (failed.empty()) return kOk;
  std::string names;
  for (const std::string& f : failed) names += (names.empty() ? "" : ", ") + f;
  std::cerr << "selfcheck failed: " << names << "\n";
  return kCheckFailed;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string kind = "two-moons", out;
  std::size_t count = 500, dim = 8;
  double noise = 0.05, scale = 100.0, separation = 6.0, spread = 1.0;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  RunDir run(a.out, "synth");
  json settings = {{"kind", a.kind}, {"count", a.count}};
  if (a.kind == "two-moons") {
    const Mat X = synth::two_moons(a.count, a.noise, a.scale, a.seed);
    io::write_points_csv(run.dir() / "points.csv", X, {"x0", "x1"});
    run.output(run.dir() / "points.csv");
    settings["noise"] = a.noise;
    settings["scale"] = a.scale;
  } else if (a.kind == "two-clusters") {
    const synth::ClusterCloud c = synth::two_clusters(a.count, a.dim, a.separation, a.spread, a.seed);
    std::vector<std::string> header;
    for (std::size_t j = 0; j < a.dim; ++j) header.push_back("x" + std::to_string(j));
    io::write_points_csv(run.dir() / "source.csv", c.source, header);
    io::write_points_csv(run.dir() / "target.csv", c.target, header);
    io::write_points_csv(run.dir() / "points.csv", synth::stack(c.source, c.target), header);
    for (const char* f : {"source.csv", "target.csv", "points.csv"}) run.output(run.dir() / f);
    settings["dim"] = a.dim;
    settings["separation"] = a.separation;
    settings["spread"] = a.spread;
  } else {
    throw InputError("synth: unknown kind '" + a.kind + "' (two-moons, two-clusters)");
  }
  run.manifest()["seed"] = a.seed;
  run.manifest()["settings"] = settings;
  run.finish();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned bias forces for transition paths and population transport"};
  app.require_subcommand(1);
  std::function<int()> action;

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit-manifold", "Fit an RBF energy landscape to a point cloud");
  fit_cmd->add_option("--data", fit.data, "CSV of points, one per row")->required();
  fit_cmd->add_option("--out", fit.out, "Run directory")->required();
  fit_cmd->add_option("--nc", fit.opts.n_centers, "Number of centres")->capture_default_str();
  fit_cmd->add_option("--kappa", fit.opts.kappa, "Bandwidth factor")->capture_default_str();
  fit_cmd->add_option("--eps", fit.opts.eps, "Energy floor")->capture_default_str();
  fit_cmd->add_option("--alpha", fit.opts.alpha, "Energy exponent")->capture_default_str();
  fit_cmd->add_option("--seed", fit.opts.seed, "k-means seed")->capture_default_str();
  fit_cmd->callback([&] { action = [&] { return cmd_fit_manifold(fit); }; });

  ConfigArgs train_cfg;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train a bias network");
  train_cmd->add_option("--config", train_cfg.config, "key = value config file")->required();
  train_cmd->add_option("--set", train_cfg.overrides, "Override a config key (key=value), repeatable");
  train_cmd->add_option("--seed", train_cfg.seed, "Override the config seed");
  train_cmd->add_option("--out", train_out, "Run directory")->required();
  train_cmd->callback([&] { action = [&] { return cmd_train(train_cfg, train_out); }; });

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Sample paths under a trained bias (or none)");
  sim_cmd->add_option("--config", sim.cfg.config, "Config giving dynamics and landscape")->required();
  sim_cmd->add_option("--checkpoint", sim.checkpoint, "Trained model checkpoint");
  sim_cmd->add_flag("--base", sim.base, "Unbiased dynamics, no checkpoint");
  sim_cmd->add_option("--init", sim.init, "Initial-state CSV (overrides initial_source)");
  sim_cmd->add_option("--target", sim.target, "Target CSV (overrides target_source)");
  sim_cmd->add_option("--M", sim.M, "Number of trajectories (default: config M)");
  sim_cmd->add_option("--set", sim.cfg.overrides, "Override a config key (key=value), repeatable");
  sim_cmd->add_option("--seed", sim.cfg.seed, "Override the config seed");
  sim_cmd->add_option("--out", sim.out, "Run directory")->required();
  sim_cmd->callback([&] { action = [&] { return cmd_simulate(sim); }; });

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Score simulated endpoints; each --generated dir is one repeat");
  ev_cmd->add_option("--generated", ev.generated, "simulate output directories")->required();
  ev_cmd->add_option("--reference", ev.reference, "Reference point cloud CSV");
  ev_cmd->add_option("--metrics", ev.metrics, "Comma list of mmd,w1,w2,thp,rmsd,ets")->capture_default_str();
  ev_cmd->add_option("--w-dims", ev.w_dims, "Leading coordinates used by W1/W2 (0 = all)")->capture_default_str();
  ev_cmd->add_option("--thp-radius", ev.thp_radius, "Hit radius")->capture_default_str();
  ev_cmd->add_option("--cv", ev.cv, "Comma list of coordinates used by THP (default all)");
  ev_cmd->add_option("--seed", ev.seed, "Resampling seed")->capture_default_str();
  ev_cmd->add_option("--out", ev.out, "Run directory")->required();
  ev_cmd->callback([&] { action = [&] { return cmd_evaluate(ev); }; });

  SelfArgs self;
  auto* self_cmd = app.add_subcommand("selfcheck", "Run the internal consistency suites");
  self_cmd->add_flag("--quick", self.quick, "One tenth of the default case counts");
  self_cmd->add_option("--checkpoint", self.checkpoint, "Also verify this model checkpoint");
  self_cmd->add_option("--seed", self.seed, "Base seed")->capture_default_str();
  self_cmd->callback([&] { action = [&] { return cmd_selfcheck(self); }; });

  SynthArgs syn;
  auto* syn_cmd = app.add_subcommand("synth", "Write a synthetic point cloud");
  syn_cmd->add_option("--kind", syn.kind, "two-moons or two-clusters")->capture_default_str();
  syn_cmd->add_option("--count", syn.count, "Points (per population for two-clusters)")->capture_default_str();
  syn_cmd->add_option("--dim", syn.dim, "Dimension (two-clusters)")->capture_default_str();
  syn_cmd->add_option("--noise", syn.noise, "Jitter (two-moons)")->capture_default_str();
  syn_cmd->add_option("--scale", syn.scale, "Scale (two-moons)")->capture_default_str();
  syn_cmd->add_option("--separation", syn.separation, "Distance between means (two-clusters)")->capture_default_str();
  syn_cmd->add_option("--spread", syn.spread, "Leading-axis std (two-clusters)")->capture_default_str();
  syn_cmd->add_option("--seed", syn.seed, "Seed")->capture_default_str();
  syn_cmd->add_option("--out", syn.out, "Run directory")->required();
  syn_cmd->callback([&] { action = [&] { return cmd_synth(syn); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    return action();
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
