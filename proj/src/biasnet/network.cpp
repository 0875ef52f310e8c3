// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "esbm/biasnet.hpp"
#include "esbm/checkpoint.hpp"
#include "esbm/error.hpp"

namespace esbm::bias {

namespace {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;

struct Linear {
  std::string name;
  std::size_t in, out;
  bool bias = true;
};

std::vector<Linear> layout(const NetConfig& c) {
  std::vector<Linear> out;
  out.push_back({"in", c.token_dim(), c.hidden});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "enc" + std::to_string(l) + ".";
    for (const char* w : {"q", "k", "v", "o"}) out.push_back({p + w, c.hidden, c.hidden});
    out.push_back({p + "ff1", c.hidden, c.ff});
    out.push_back({p + "ff2", c.ff, c.hidden});
  }
  out.push_back({"alpha.1", c.hidden, c.hidden});
  out.push_back({"alpha.2", c.hidden, 1});
  out.push_back({"h.1", c.hidden, c.hidden});
  out.push_back({"h.2", c.hidden, c.d});
  return out;
}

NodeId linear(Graph& g, NodeId x, const std::string& name) {
  NodeId W = g.input(name + ".W", true);
  NodeId b = g.input(name + ".b", true);
  return g.add(g.matmul(x, W), b);
}

NodeId norm(Graph& g, NodeId x, const std::string& name) {
  NodeId gamma = g.input(name + ".gamma", true);
  NodeId beta = g.input(name + ".beta", true);
  return g.add(g.mul(g.layer_norm(x, 1e-5), gamma), beta);
}

// x: (B, n, H) -> (B, n, H)
NodeId self_attention(Graph& g, NodeId x, const NetConfig& c, const std::string& p) {
  const std::size_t heads = c.heads, dh = c.hidden / c.heads;
  auto split = [&](NodeId t) {
    // (B, n, H) -> (B, n, heads, dh) -> (B, heads, n, dh) -> (B*heads, n, dh)
    NodeId r = g.reshape(t, {0, c.n, heads, dh});
    r = g.transpose(r, {0, 2, 1, 3});
    return g.reshape(r, {0, c.n, dh});
  };
  NodeId q = split(linear(g, x, p + "q"));
  NodeId k = split(linear(g, x, p + "k"));
  NodeId v = split(linear(g, x, p + "v"));
  NodeId scores = g.scale(g.batch_matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  NodeId attn = g.softmax(scores, 2);
  attn = g.dropout(attn, c.dropout);
  NodeId ctx = g.batch_matmul(attn, v);
  ctx = g.reshape(ctx, {0, heads, c.n, dh});
  ctx = g.transpose(ctx, {0, 2, 1, 3});
  ctx = g.reshape(ctx, {0, c.n, c.hidden});
  return linear(g, ctx, p + "o");
}

}  // namespace

void NetConfig::validate() const {
  if (n == 0 || d == 0) throw InputError("network: n and d must be positive");
  if (hidden == 0 || layers == 0 || heads == 0 || ff == 0) throw InputError("network: dimensions must be positive");
  if (hidden % heads != 0) throw InputError("network: hidden size must be divisible by the number of heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("network: dropout must lie in [0, 1)");
  if (md_mode && d != 2 && d != 3) throw InputError("network: MD mode needs d = 2 or 3");
  if (!align_mask.empty() && align_mask.size() != n) throw InputError("network: align mask length must equal n");
}

BiasNetwork::BiasNetwork(NetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  for (const Linear& L : layout(config_)) {
    const bool zero = L.name == "alpha.2" || L.name == "h.2";
    const double bound = 1.0 / std::sqrt(static_cast<double>(L.in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor W({L.in, L.out}), b({L.out});
    if (!zero) {
      for (double& w : W.data()) w = u(rng);
      for (double& w : b.data()) w = u(rng);
    }
    params_.emplace(L.name + ".W", std::move(W));
    params_.emplace(L.name + ".b", std::move(b));
  }
  for (std::size_t l = 0; l < config_.layers; ++l) {
    for (const char* nm : {".ln1", ".ln2"}) {
      const std::string p = "enc" + std::to_string(l) + nm;
      params_.emplace(p + ".gamma", Tensor({config_.hidden}, 1.0));
      params_.emplace(p + ".beta", Tensor({config_.hidden}, 0.0));
    }
  }
}

BiasNetwork::BiasNetwork(NetConfig config, ad::ParameterSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const BiasNetwork shape_ref(config_, 0);
  for (const auto& [name, t] : shape_ref.params_) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InputError("network parameters lack '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw ShapeError("network parameter '" + name + "' has shape " + ad::to_string(it->second.shape()) +
                       ", expected " + ad::to_string(t.shape()));
    }
  }
  if (params_.size() != shape_ref.params_.size()) throw InputError("network checkpoint has unexpected extra tensors");
}

void BiasNetwork::save(const std::filesystem::path& path) const {
  ad::save_checkpoint(path, params_);
  nlohmann::ordered_json j;
  j["token_dim"] = config_.token_dim();
  j["n"] = config_.n;
  j["d"] = config_.d;
  j["velocity_conditioning"] = config_.velocity_conditioning;
  j["md_mode"] = config_.md_mode;
  j["hidden"] = config_.hidden;
  j["layers"] = config_.layers;
  j["heads"] = config_.heads;
  j["ff"] = config_.ff;
  j["dropout"] = config_.dropout;
  j["align_mask"] = config_.align_mask;
  std::ofstream out(path.string() + ".json", std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string() + ".json");
  out << j.dump(2) << '\n';
}

BiasNetwork BiasNetwork::load(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw InputError("missing network sidecar " + path.string() + ".json");
  NetConfig c;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    c.n = j.at("n");
    c.d = j.at("d");
    c.velocity_conditioning = j.at("velocity_conditioning");
    c.md_mode = j.at("md_mode");
    c.hidden = j.at("hidden");
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.ff = j.at("ff");
    c.dropout = j.at("dropout");
    c.align_mask = j.value("align_mask", std::vector<bool>{});
    if (j.at("token_dim").get<std::size_t>() != c.token_dim()) throw InputError("sidecar token_dim inconsistent with d");
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed network sidecar " + path.string() + ".json: " + e.what());
  }
  return BiasNetwork(c, ad::load_checkpoint(path));
}

BiasGraph build_bias_graph(const NetConfig& c) {
  c.validate();
  BiasGraph bg;
  Graph& g = bg.graph;
  bg.tokens = g.input("tokens");
  bg.s_hat = g.input("s_hat");
  bg.mask = g.input("mask");
  if (c.md_mode) bg.rotation = g.input("rotation");

  NodeId x = linear(g, bg.tokens, "in");
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "enc" + std::to_string(l) + ".";
    NodeId sa = g.dropout(self_attention(g, x, c, p), c.dropout);
    x = norm(g, g.add(x, sa), p + "ln1");
    NodeId ff = linear(g, g.dropout(g.gelu(linear(g, x, p + "ff1")), c.dropout), p + "ff2");
    x = norm(g, g.add(x, g.dropout(ff, c.dropout)), p + "ln2");
  }
  NodeId a = linear(g, g.gelu(linear(g, x, "alpha.1")), "alpha.2");  // (B, n, 1)
  bg.alpha_raw = g.sum(a, 2);
  // the floor keeps <b, s_hat> > 0 after rounding even when softplus underflows
  bg.alpha = g.add(g.softplus(bg.alpha_raw), g.constant(Tensor::scalar(kAlphaFloor)));
  bg.h = linear(g, g.gelu(linear(g, x, "h.1")), "h.2");

  // assemble in (d, B, n) layout so (B, n) factors broadcast over the leading axis
  NodeId s_t = g.transpose(bg.s_hat, {2, 0, 1});
  NodeId h_t = g.transpose(bg.h, {2, 0, 1});
  NodeId par = g.mul(s_t, bg.alpha);
  NodeId dot = g.sum(g.mul(s_t, h_t), 0);
  NodeId orth = g.sub(h_t, g.mul(s_t, dot));
  NodeId b_t = g.mul(g.add(par, orth), bg.mask);
  bg.b = g.transpose(b_t, {1, 2, 0});
  if (c.md_mode) bg.b = g.batch_matmul(bg.b, bg.rotation);
  return bg;
}

ad::Bindings make_bindings(const BiasNetwork& net, const BiasInputs& inputs) {
  ad::Bindings b;
  for (const auto& [name, t] : net.params()) b.emplace(name, &t);
  b.emplace("tokens", &inputs.tokens);
  b.emplace("s_hat", &inputs.s_hat);
  b.emplace("mask", &inputs.mask);
  if (net.config().md_mode) b.emplace("rotation", &inputs.rotation);
  return b;
}

BiasEvaluator::BiasEvaluator(const NetConfig& config) : g_(build_bias_graph(config)) {}

void BiasEvaluator::run(const BiasNetwork& net, std::span<const SystemState> states,
                        std::span<const TargetSpec* const> targets) {
  inputs_ = prepare_inputs(net.config(), states, targets);
  ad::EvalOptions opts;
  opts.check_finite = false;
  const Tensor& b = g_.graph.evaluate(g_.b, make_bindings(net, inputs_), opts);
  const std::size_t n = net.config().n, d = net.config().d;
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (!std::isfinite(b[k])) {
      const std::size_t sample = k / (n * d), particle = (k / d) % n;
      throw NumericError("bias network produced a non-finite force for particle " + std::to_string(particle) +
                         " (sample " + std::to_string(sample) + ")");
    }
  }
}

const Tensor& BiasEvaluator::forces(const BiasNetwork& net, std::span<const SystemState> states,
                                    std::span<const TargetSpec* const> targets) {
  run(net, states, targets);
  return g_.graph.value(g_.b);
}

BiasOutput BiasEvaluator::compute(const BiasNetwork& net, const SystemState& state, const TargetSpec& target) {
  const TargetSpec* tp = &target;
  run(net, std::span<const SystemState>(&state, 1), std::span<const TargetSpec* const>(&tp, 1));
  const std::size_t n = net.config().n, d = net.config().d;
  BiasOutput out;
  const Tensor& alpha = g_.graph.value(g_.alpha);
  const Tensor& h = g_.graph.value(g_.h);
  const Tensor& b = g_.graph.value(g_.b);
  out.alpha = Eigen::Map<const Vec>(alpha.raw(), static_cast<Eigen::Index>(n));
  out.h = Eigen::Map<const Mat>(h.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  out.b = Eigen::Map<const Mat>(b.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  out.s_hat = Eigen::Map<const Mat>(inputs_.s_hat.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  if (net.config().md_mode) {
    // report h and s_hat in the original frame, like b
    const Mat& Q = inputs_.rotations[0];
    out.h = out.h * Q;
    out.s_hat = out.s_hat * Q;
  }
  return out;
}

BiasOutput compute_bias(const BiasNetwork& net, const SystemState& state, const TargetSpec& target) {
  BiasEvaluator ev(net.config());
  return ev.compute(net, state, target);
}

}  // namespace esbm::bias
