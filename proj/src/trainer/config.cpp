// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "esbm/error.hpp"
#include "esbm/io.hpp"
#include "esbm/trainer.hpp"

namespace esbm::train {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw InputError("config: '" + key + "' expects a number, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw InputError("config: '" + key + "' expects true or false, got '" + value + "'");
}

struct Field {
  std::string key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field number(const char* key, T TrainConfig::*member) {
  return Field{key,
               [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
               [member](const TrainConfig& c) {
                 if constexpr (std::is_floating_point_v<T>) {
                   return io::format_double(c.*member);
                 } else {
                   return std::to_string(c.*member);
                 }
               }};
}

Field flag(const char* key, bool TrainConfig::*member) {
  return Field{key, [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_bool(key, v); },
               [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field text(const char* key, std::string TrainConfig::*member) {
  return Field{key, [member](TrainConfig& c, const std::string& v) { c.*member = v; },
               [member](const TrainConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      number("n_rollouts", &TrainConfig::n_rollouts),
      number("n_epochs", &TrainConfig::n_epochs),
      number("M", &TrainConfig::M),
      number("batch_size", &TrainConfig::batch_size),
      number("buffer_capacity", &TrainConfig::buffer_capacity),
      number("dt", &TrainConfig::dt),
      number("K", &TrainConfig::K),
      number("n", &TrainConfig::n),
      number("d", &TrainConfig::d),
      number("sigma", &TrainConfig::sigma),
      number("gamma", &TrainConfig::gamma),
      number("tau_start", &TrainConfig::tau_start),
      number("tau_end", &TrainConfig::tau_end),
      text("mode", &TrainConfig::mode),
      number("lr", &TrainConfig::lr),
      text("objective", &TrainConfig::objective),
      number("grad_clip", &TrainConfig::grad_clip),
      number("lv_w_lr", &TrainConfig::lv_w_lr),
      number("seed", &TrainConfig::seed),
      flag("velocity_conditioning", &TrainConfig::velocity_conditioning),
      flag("md_mode", &TrainConfig::md_mode),
      number("hidden", &TrainConfig::hidden),
      number("layers", &TrainConfig::layers),
      number("heads", &TrainConfig::heads),
      number("ff", &TrainConfig::ff),
      number("dropout", &TrainConfig::dropout),
      text("potential", &TrainConfig::potential),
      number("dw_a", &TrainConfig::dw_a),
      number("dw_b", &TrainConfig::dw_b),
      text("manifold_path", &TrainConfig::manifold_path),
      text("initial_source", &TrainConfig::initial_source),
      text("target_source", &TrainConfig::target_source),
      text("sampling", &TrainConfig::sampling),
  };
  return f;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(*this, value);
      return;
    }
  }
  throw InputError("config: unknown key '" + key + "'");
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

void TrainConfig::validate() const {
  if (M == 0 || batch_size == 0 || buffer_capacity == 0 || K == 0 || n == 0 || d == 0) {
    throw InputError("config: counts (M, batch_size, buffer_capacity, K, n, d) must be positive");
  }
  if (!(dt > 0.0) || !(sigma > 0.0) || !(gamma > 0.0) || !(lr > 0.0)) {
    throw InputError("config: dt, sigma, gamma and lr must be positive");
  }
  if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw InputError("config: temperatures must be positive");
  if (!(grad_clip > 0.0) || !(lv_w_lr > 0.0)) throw InputError("config: grad_clip and lv_w_lr must be positive");
  dyn::parse_mode(mode);
  obj::parse_objective(objective);
  energy::parse_potential_kind(potential);
  sampling_kind();
  net_config().validate();
}

Sampling TrainConfig::sampling_kind() const {
  if (sampling == "fixed") return Sampling::Fixed;
  if (sampling == "cluster") return Sampling::Cluster;
  throw InputError("config: sampling must be fixed or cluster, got '" + sampling + "'");
}

dyn::DynamicsParams TrainConfig::dynamics() const {
  dyn::DynamicsParams p;
  p.mode = dyn::parse_mode(mode);
  p.gamma = gamma;
  p.tau_start = tau_start;
  p.tau_end = tau_end;
  p.dt = dt;
  p.K = K;
  return p;
}

bias::NetConfig TrainConfig::net_config() const {
  bias::NetConfig c;
  c.n = n;
  c.d = d;
  c.hidden = hidden;
  c.layers = layers;
  c.heads = heads;
  c.ff = ff;
  c.dropout = dropout;
  c.velocity_conditioning = velocity_conditioning;
  c.md_mode = md_mode;
  return c;
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  TrainConfig c = parse_config(io::read_file(path));
  // data paths in a config file are relative to the file
  const std::filesystem::path base = path.parent_path();
  for (std::string* p : {&c.manifold_path, &c.initial_source, &c.target_source}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return c;
}

}  // namespace esbm::train
