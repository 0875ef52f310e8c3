// SPDX-License-Identifier: Apache-2.0
#include "esbm/buffer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "esbm/error.hpp"

namespace esbm::buffer {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string entry_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traj_%05zu", i);
  return buf;
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InputError("replay buffer capacity must be positive");
}

void ReplayBuffer::push(dyn::Trajectory trajectory, const obj::PathScore& score) {
  if (!trajectory.valid()) throw InputError("replay buffer: rejected invalid trajectory (seed " + std::to_string(trajectory.seed) + ")");
  if (!std::isfinite(score.log_weight)) throw InputError("replay buffer: rejected trajectory with non-finite log weight");
  entries_.push_back(Entry{std::move(trajectory), score, counter_++});
  while (entries_.size() > capacity_) entries_.pop_front();
}

void ReplayBuffer::push(dyn::Trajectory trajectory) {
  const obj::PathScore s = obj::score(trajectory);
  push(std::move(trajectory), s);
}

std::vector<double> ReplayBuffer::probabilities() const {
  std::vector<double> l;
  l.reserve(entries_.size());
  for (const Entry& e : entries_) l.push_back(e.score.log_weight);
  return obj::softmax(l);
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch_size, std::mt19937_64& rng) const {
  if (entries_.empty()) throw StateError("cannot sample from an empty replay buffer");
  const std::vector<double> p = probabilities();
  std::vector<double> cdf(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    cdf[i] = acc;
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::size_t> out(batch_size);
  for (auto& idx : out) {
    const double x = u(rng) * acc;
    idx = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), x) - cdf.begin());
    if (idx >= cdf.size()) idx = cdf.size() - 1;
  }
  return out;
}

std::vector<const Entry*> ReplayBuffer::sample(std::size_t batch_size, std::mt19937_64& rng) const {
  std::vector<const Entry*> out;
  for (std::size_t i : sample_indices(batch_size, rng)) out.push_back(&entries_[i]);
  return out;
}

void ReplayBuffer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json index;
  index["capacity"] = capacity_;
  index["inserted"] = counter_;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Entry& e = entries_[i];
    const dyn::Trajectory& t = e.trajectory;
    const std::string stem = entry_stem(i);
    dyn::write_trajectory_csv(dir / (stem + ".csv"), t);

    std::ofstream aux(dir / (stem + ".aux.csv"), std::ios::trunc);
    if (!aux) throw InputError("cannot write " + (dir / (stem + ".aux.csv")).string());
    aux << "step,particle";
    for (std::size_t j = 0; j < t.d; ++j) aux << ",u" << j;
    for (std::size_t j = 0; j < t.d; ++j) aux << ",dw" << j;
    aux << ",sigma\n";
    for (std::size_t k = 0; k < t.K; ++k) {
      for (std::size_t p = 0; p < t.n; ++p) {
        aux << k << ',' << p;
        for (const Mat* m : {&t.behavior_bias, &t.noise}) {
          for (std::size_t j = 0; j < t.d; ++j) {
            aux << ',' << fmt((*m)(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p * t.d + j)));
          }
        }
        aux << ',' << fmt(t.sigma(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p))) << '\n';
      }
    }

    nlohmann::ordered_json j;
    j["file"] = stem;
    j["serial"] = e.serial;
    j["seed"] = t.seed;
    j["mode"] = dyn::to_string(t.mode);
    j["dt"] = fmt(t.dt);
    j["reward"] = fmt(e.score.reward);
    j["log_p0"] = fmt(e.score.log_p0);
    j["log_pb"] = fmt(e.score.log_pb);
    j["log_weight"] = fmt(e.score.log_weight);
    j["target_sigma"] = fmt(t.target.sigma);
    std::vector<std::string> rb;
    for (Eigen::Index k = 0; k < t.target.R_B.size(); ++k) rb.push_back(fmt(t.target.R_B.data()[k]));
    j["target"] = rb;
    list.push_back(std::move(j));
  }
  index["entries"] = std::move(list);
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw InputError("cannot write " + (dir / "index.json").string());
  out << index.dump(2) << '\n';
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw InputError("no buffer index in " + dir.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed buffer index: " + std::string(e.what()));
  }
  auto num = [](const nlohmann::json& j) { return std::stod(j.get<std::string>()); };
  ReplayBuffer buf(index.at("capacity").get<std::size_t>());
  for (const auto& j : index.at("entries")) {
    const std::string stem = j.at("file");
    const std::vector<SystemState> states = dyn::read_trajectory_csv(dir / (stem + ".csv"));
    dyn::Trajectory t;
    t.n = states.front().n();
    t.d = states.front().d();
    t.K = states.size() - 1;
    t.mode = dyn::parse_mode(j.at("mode"));
    t.dt = num(j.at("dt"));
    t.seed = j.at("seed");
    const auto nd = static_cast<Eigen::Index>(t.n * t.d);
    t.R.resize(static_cast<Eigen::Index>(t.K + 1), nd);
    t.V.resize(static_cast<Eigen::Index>(t.K + 1), nd);
    for (std::size_t k = 0; k <= t.K; ++k) {
      t.R.row(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::RowVectorXd>(states[k].R.data(), nd);
      t.V.row(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::RowVectorXd>(states[k].V.data(), nd);
    }
    t.noise.resize(static_cast<Eigen::Index>(t.K), nd);
    t.behavior_bias.resize(static_cast<Eigen::Index>(t.K), nd);
    t.sigma.resize(static_cast<Eigen::Index>(t.K), static_cast<Eigen::Index>(t.n));
    std::ifstream aux(dir / (stem + ".aux.csv"));
    std::string line;
    if (!aux || !std::getline(aux, line)) throw InputError("missing " + stem + ".aux.csv");
    std::size_t rows = 0;
    while (std::getline(aux, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::vector<double> v;
      while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
      if (v.size() != 3 + 2 * t.d) throw InputError(stem + ".aux.csv: wrong column count");
      const auto k = static_cast<Eigen::Index>(v[0]), p = static_cast<Eigen::Index>(v[1]);
      if (k >= static_cast<Eigen::Index>(t.K) || p >= static_cast<Eigen::Index>(t.n)) throw InputError(stem + ".aux.csv: index out of range");
      for (std::size_t q = 0; q < t.d; ++q) {
        t.behavior_bias(k, p * static_cast<Eigen::Index>(t.d) + static_cast<Eigen::Index>(q)) = v[2 + q];
        t.noise(k, p * static_cast<Eigen::Index>(t.d) + static_cast<Eigen::Index>(q)) = v[2 + t.d + q];
      }
      t.sigma(k, p) = v.back();
      ++rows;
    }
    if (rows != t.K * t.n) throw InputError(stem + ".aux.csv: expected " + std::to_string(t.K * t.n) + " rows");
    t.target.sigma = num(j.at("target_sigma"));
    t.target.R_B.resize(static_cast<Eigen::Index>(t.n), static_cast<Eigen::Index>(t.d));
    const auto& rb = j.at("target");
    if (rb.size() != t.n * t.d) throw InputError("buffer index: target size mismatch for " + stem);
    for (std::size_t k = 0; k < rb.size(); ++k) t.target.R_B.data()[k] = num(rb[k]);
    t.reward = num(j.at("reward"));
    t.log_p0 = num(j.at("log_p0"));
    t.log_pb = num(j.at("log_pb"));
    obj::PathScore s = obj::score(t);
    buf.push(std::move(t), s);
    buf.entries_.back().serial = j.at("serial");
  }
  buf.counter_ = index.at("inserted");
  return buf;
}

}  // namespace esbm::buffer
