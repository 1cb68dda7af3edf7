#pragma once

// Declarative run description. Every field has a string key; configs load
// from flat `key = value` files (with '#' comments) or from a run manifest,
// and any key can be overridden from the command line.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"  // nlohmann/json, vendored

#include "grok/linalg.hpp"

namespace grok {

/// Unknown configuration key.
struct ConfigKeyError : PreconditionError {
  using PreconditionError::PreconditionError;
};

struct ExperimentConfig {
  std::string task = "fit_filter";  // fit_filter | node_classify

  // Graph: grid for fit_filter, SBM for node_classify (unless `graph` is set).
  std::size_t grid_rows = 24;
  std::size_t grid_cols = 24;
  std::vector<std::size_t> sbm_blocks = {50, 50};
  double p_intra = 0.2;
  double p_inter = 0.02;
  std::size_t feature_dim = 8;
  double feature_noise = 1.0;
  std::string graph;     // optional edge-list file
  std::string features;  // optional feature file
  std::string labels;    // optional label file

  // Filter fitting.
  std::string filter = "all";
  std::size_t num_signals = 8;
  std::size_t fit_steps = 2000;
  double fit_lr = 0.01;
  double ridge = 1e-8;

  // Model.
  std::size_t K = 2;
  std::size_t M = 64;
  std::size_t d_model = 16;
  std::size_t heads = 2;
  std::size_t layers = 1;
  double dropout = 0.0;

  // Training.
  double lr = 0.01;
  double weight_decay = 5e-4;
  std::size_t max_epochs = 2000;
  std::size_t patience = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<double> split = {0.6, 0.2, 0.2};
  std::size_t num_repeats = 5;
  std::uint64_t seed = 0;

  // Exports.
  std::size_t grid_points = 512;
  std::size_t layer_index = 0;
  std::string checkpoint;  // optional model file for export verbs
  std::string cache;       // optional decomposition cache path

  void validate() const {
    if (task != "fit_filter" && task != "node_classify")
      throw PreconditionError("config: task must be fit_filter or node_classify");
    if (split.size() != 3) throw PreconditionError("config: split needs three ratios");
    double s = 0.0;
    for (double r : split) {
      if (!(r > 0.0)) throw PreconditionError("config: split ratios must be positive");
      s += r;
    }
    if (std::abs(s - 1.0) > 1e-9) throw PreconditionError("config: split ratios must sum to 1");
    if (num_repeats < 1) throw PreconditionError("config: num_repeats must be >= 1");
    if (K < 1) throw PreconditionError("config: K must be >= 1");
    if (heads == 0 || d_model % heads != 0)
      throw PreconditionError("config: heads must divide d_model");
    if (p_intra < 0 || p_intra > 1 || p_inter < 0 || p_inter > 1)
      throw PreconditionError("config: probabilities must lie in [0, 1]");
    if (patience > max_epochs) throw PreconditionError("config: patience > max_epochs");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream ss(text);
  T v{};
  if constexpr (std::is_unsigned_v<T>)
    if (text.find('-') != std::string::npos)
      throw PreconditionError("config: key '" + key + "' needs a non-negative integer, got '" +
                              text + "'");
  if (!(ss >> v) || !(ss >> std::ws).eof())
    throw PreconditionError("config: bad value '" + text + "' for key '" + key + "'");
  return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw PreconditionError("config: empty list for key '" + key + "'");
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream ss;
  ss.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) ss << (i ? "," : "") << v[i];
  return ss.str();
}

struct KeySpec {
  const char* name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define GROK_STR_KEY(field)                                                          \
  KeySpec{#field, [](ExperimentConfig& c, const std::string& v) { c.field = v; }, \
          [](const ExperimentConfig& c) { return c.field; }}
#define GROK_NUM_KEY(field, type)                                                     \
  KeySpec{#field,                                                                     \
          [](ExperimentConfig& c, const std::string& v) {                             \
            c.field = parse_number<type>(#field, v);                                  \
          },                                                                          \
          [](const ExperimentConfig& c) {                                             \
            if constexpr (std::is_floating_point_v<type>) return format_double(c.field); \
            else return std::to_string(c.field);                                      \
          }}
#define GROK_LIST_KEY(field, type)                                                          \
  KeySpec{#field,                                                                           \
          [](ExperimentConfig& c, const std::string& v) { c.field = parse_list<type>(#field, v); }, \
          [](const ExperimentConfig& c) { return join(c.field); }}

inline const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      GROK_STR_KEY(task),
      GROK_NUM_KEY(grid_rows, std::size_t),
      GROK_NUM_KEY(grid_cols, std::size_t),
      GROK_LIST_KEY(sbm_blocks, std::size_t),
      GROK_NUM_KEY(p_intra, double),
      GROK_NUM_KEY(p_inter, double),
      GROK_NUM_KEY(feature_dim, std::size_t),
      GROK_NUM_KEY(feature_noise, double),
      GROK_STR_KEY(graph),
      GROK_STR_KEY(features),
      GROK_STR_KEY(labels),
      GROK_STR_KEY(filter),
      GROK_NUM_KEY(num_signals, std::size_t),
      GROK_NUM_KEY(fit_steps, std::size_t),
      GROK_NUM_KEY(fit_lr, double),
      GROK_NUM_KEY(ridge, double),
      GROK_NUM_KEY(K, std::size_t),
      GROK_NUM_KEY(M, std::size_t),
      GROK_NUM_KEY(d_model, std::size_t),
      GROK_NUM_KEY(heads, std::size_t),
      GROK_NUM_KEY(layers, std::size_t),
      GROK_NUM_KEY(dropout, double),
      GROK_NUM_KEY(lr, double),
      GROK_NUM_KEY(weight_decay, double),
      GROK_NUM_KEY(max_epochs, std::size_t),
      GROK_NUM_KEY(patience, std::size_t),
      GROK_NUM_KEY(beta1, double),
      GROK_NUM_KEY(beta2, double),
      GROK_NUM_KEY(adam_eps, double),
      GROK_LIST_KEY(split, double),
      GROK_NUM_KEY(num_repeats, std::size_t),
      GROK_NUM_KEY(seed, std::uint64_t),
      GROK_NUM_KEY(grid_points, std::size_t),
      GROK_NUM_KEY(layer_index, std::size_t),
      GROK_STR_KEY(checkpoint),
      GROK_STR_KEY(cache),
  };
  return table;
}

#undef GROK_STR_KEY
#undef GROK_NUM_KEY
#undef GROK_LIST_KEY

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : detail::key_table()) out.emplace_back(k.name);
  return out;
}

inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : detail::key_table())
    if (key == k.name) {
      k.set(cfg, detail::trim(value));
      return;
    }
  std::string valid;
  for (const auto& k : detail::key_table()) valid += (valid.empty() ? "" : ",") + std::string(k.name);
  throw ConfigKeyError("unknown config key '" + key + "'; valid keys: " + valid);
}

/// Applies a "key=value" override.
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw PreconditionError("override '" + assignment + "' is not of the form key=value");
  set_config_value(cfg, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// Every key with its resolved value, in table order.
inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& k : detail::key_table()) j[k.name] = k.get(cfg);
  return j;
}

/// Merges a config file into cfg. Accepts either the flat key=value format
/// or a run manifest (JSON with a "config" object).
inline void load_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ": invalid JSON manifest: " + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object())
      throw IoError(path + ": manifest has no \"config\" object");
    for (const auto& [key, value] : j["config"].items())
      set_config_value(cfg, key, value.is_string() ? value.get<std::string>() : value.dump());
    return;
  }
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos)
      throw PreconditionError(path + ":" + std::to_string(lineno) + ": expected key = value");
    apply_override(cfg, line);
  }
}

}  // namespace grok
