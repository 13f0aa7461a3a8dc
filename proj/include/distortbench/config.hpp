#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "distortbench/agent.hpp"
#include "distortbench/binary_io.hpp"
#include "distortbench/errors.hpp"
#include "distortbench/filters.hpp"
#include "distortbench/sensitivity.hpp"
#include "distortbench/tensor.hpp"

namespace distortbench {

/// Everything that determines a generation run. Serialized as flat
/// `key = value` lines; see config_keys() for the full list.
struct RunConfig {
  AttackMode mode = AttackMode::Untargeted;
  /// Target class for targeted runs.
  std::optional<std::size_t> target_class;
  /// Probability thresholds on the tracked class. When set, each threshold
  /// crossing yields one severity level instead of multiplier escalation.
  std::vector<double> thresholds;
  std::size_t max_iter = 3500;
  /// Upper bound on the L2 distortion of a generated sample (0 = none).
  double l2_budget = 0.0;
  /// Per-episode ceiling on classifier evaluations (0 = none).
  std::uint64_t max_queries = 0;
  std::size_t patch_size = 8;
  std::vector<FilterId> filters = {FilterId::GaussianNoise};
  FilterParams filter_params;
  std::vector<double> severities = {1, 2, 3, 4, 5};
  std::uint64_t seed = 0;
  bool skip_misclassified = true;
  std::string dataset;
  Shape image_shape{3, 32, 32};
  std::string victim;
  std::string victim_id;
  std::string endpoint;
  std::string agent;
  std::size_t max_batch = 128;
  std::size_t state_top_k = 32;
  std::size_t train_epochs = 1;
  AgentConfig agent_config;

  StateConfig state_config() const {
    StateConfig s;
    s.top_k = state_top_k;
    s.max_iter = max_iter;
    return s;
  }

  void validate() const {
    if (max_iter < 1) throw UsageError("max_iter must be >= 1");
    if (patch_size < 1) throw UsageError("patch_size must be >= 1");
    if (filters.empty()) throw UsageError("filters must name at least one filter");
    if (severities.empty() || severities.front() != 1.0) throw UsageError("severities must start at 1");
    for (std::size_t i = 1; i < severities.size(); ++i) {
      if (!(severities[i] > severities[i - 1])) throw UsageError("severities must be strictly ascending");
    }
    if (mode == AttackMode::Targeted && !target_class) throw UsageError("targeted mode needs target_class");
    for (double t : thresholds) {
      if (!(t > 0.0 && t < 1.0)) throw UsageError("thresholds must lie in (0,1)");
    }
    if (l2_budget < 0.0) throw UsageError("l2_budget must be >= 0");
    if (max_batch < 1) throw UsageError("max_batch must be >= 1");
    if (!(agent_config.reward_clip >= 0.0)) throw UsageError("reward_clip must be >= 0");
    if (agent_config.batch_size < 1 || agent_config.replay_capacity < 1 || agent_config.target_sync_every < 1) {
      throw UsageError("agent batch_size, replay_capacity and target_sync_every must be >= 1");
    }
    try {
      filter_params.validate();
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* first = v.data();
  const char* last = v.data() + v.size();
  if (!v.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || !std::isfinite(out)) {
    throw UsageError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw UsageError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::string join(const std::vector<std::string>& parts, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace detail

struct ConfigKey {
  std::string_view name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto add = [&k](std::string_view name, std::function<void(RunConfig&, const std::string&)> set,
                    std::function<std::string(const RunConfig&)> get) { k.push_back({name, std::move(set), std::move(get)}); };
    auto size_key = [&add](std::string_view name, std::size_t RunConfig::*m) {
      add(name, [m, name](RunConfig& c, const std::string& v) { c.*m = parse_uint(std::string(name), v); },
          [m](const RunConfig& c) { return std::to_string(c.*m); });
    };
    auto agent_size = [&add](std::string_view name, std::size_t AgentConfig::*m) {
      add(name, [m, name](RunConfig& c, const std::string& v) { c.agent_config.*m = parse_uint(std::string(name), v); },
          [m](const RunConfig& c) { return std::to_string(c.agent_config.*m); });
    };
    auto agent_real = [&add](std::string_view name, double AgentConfig::*m) {
      add(name, [m, name](RunConfig& c, const std::string& v) { c.agent_config.*m = parse_double(std::string(name), v); },
          [m](const RunConfig& c) { return fmt_double(c.agent_config.*m); });
    };
    auto filter_real = [&add](std::string_view name, double FilterParams::*m) {
      add(name, [m, name](RunConfig& c, const std::string& v) { c.filter_params.*m = parse_double(std::string(name), v); },
          [m](const RunConfig& c) { return fmt_double(c.filter_params.*m); });
    };
    auto text = [&add](std::string_view name, std::string RunConfig::*m) {
      add(name, [m](RunConfig& c, const std::string& v) { c.*m = v; }, [m](const RunConfig& c) { return c.*m; });
    };

    add("mode",
        [](RunConfig& c, const std::string& v) {
          if (v == "untargeted") c.mode = AttackMode::Untargeted;
          else if (v == "targeted") c.mode = AttackMode::Targeted;
          else throw UsageError("config key 'mode': expected untargeted or targeted, got '" + v + "'");
        },
        [](const RunConfig& c) { return std::string(c.mode == AttackMode::Untargeted ? "untargeted" : "targeted"); });
    add("target_class",
        [](RunConfig& c, const std::string& v) {
          if (v.empty() || v == "none") c.target_class.reset();
          else c.target_class = parse_uint("target_class", v);
        },
        [](const RunConfig& c) { return c.target_class ? std::to_string(*c.target_class) : std::string("none"); });
    add("thresholds",
        [](RunConfig& c, const std::string& v) {
          c.thresholds.clear();
          for (const auto& s : split_list(v)) c.thresholds.push_back(parse_double("thresholds", s));
        },
        [](const RunConfig& c) {
          std::vector<std::string> parts;
          for (double t : c.thresholds) parts.push_back(fmt_double(t));
          return join(parts);
        });
    size_key("max_iter", &RunConfig::max_iter);
    add("l2_budget", [](RunConfig& c, const std::string& v) { c.l2_budget = parse_double("l2_budget", v); },
        [](const RunConfig& c) { return fmt_double(c.l2_budget); });
    add("max_queries", [](RunConfig& c, const std::string& v) { c.max_queries = parse_uint("max_queries", v); },
        [](const RunConfig& c) { return std::to_string(c.max_queries); });
    size_key("patch_size", &RunConfig::patch_size);
    add("filters",
        [](RunConfig& c, const std::string& v) {
          c.filters.clear();
          for (const auto& s : split_list(v)) {
            try {
              const FilterId f = parse_filter(s);
              if (std::find(c.filters.begin(), c.filters.end(), f) != c.filters.end()) {
                throw UsageError("config key 'filters': duplicate filter '" + s + "'");
              }
              c.filters.push_back(f);
            } catch (const InvalidArgument& e) {
              throw UsageError(std::string("config key 'filters': ") + e.what());
            }
          }
        },
        [](const RunConfig& c) {
          std::vector<std::string> parts;
          for (FilterId f : c.filters) parts.emplace_back(filter_name(f));
          return join(parts);
        });
    filter_real("noise_sigma", &FilterParams::noise_sigma);
    filter_real("blur_sigma", &FilterParams::blur_sigma);
    filter_real("brightness_delta", &FilterParams::brightness_delta);
    filter_real("deadpixel_fraction", &FilterParams::deadpixel_fraction);
    filter_real("custom_intensity", &FilterParams::custom_intensity);
    filter_real("epsilon0", &FilterParams::epsilon0);
    add("severities",
        [](RunConfig& c, const std::string& v) {
          c.severities.clear();
          for (const auto& s : split_list(v)) c.severities.push_back(parse_double("severities", s));
        },
        [](const RunConfig& c) {
          std::vector<std::string> parts;
          for (double s : c.severities) parts.push_back(fmt_double(s));
          return join(parts);
        });
    add("seed", [](RunConfig& c, const std::string& v) { c.seed = parse_uint("seed", v); },
        [](const RunConfig& c) { return std::to_string(c.seed); });
    add("skip_misclassified",
        [](RunConfig& c, const std::string& v) { c.skip_misclassified = parse_bool("skip_misclassified", v); },
        [](const RunConfig& c) { return std::string(c.skip_misclassified ? "true" : "false"); });
    text("dataset", &RunConfig::dataset);
    add("image_shape",
        [](RunConfig& c, const std::string& v) {
          const auto parts = split_list(v, 'x');
          if (parts.size() != 3) throw UsageError("config key 'image_shape': expected CxHxW, got '" + v + "'");
          c.image_shape = {parse_uint("image_shape", parts[0]), parse_uint("image_shape", parts[1]),
                           parse_uint("image_shape", parts[2])};
        },
        [](const RunConfig& c) { return to_string(c.image_shape); });
    text("victim", &RunConfig::victim);
    text("victim_id", &RunConfig::victim_id);
    text("endpoint", &RunConfig::endpoint);
    text("agent", &RunConfig::agent);
    size_key("max_batch", &RunConfig::max_batch);
    size_key("state_top_k", &RunConfig::state_top_k);
    size_key("train_epochs", &RunConfig::train_epochs);
    agent_real("gamma", &AgentConfig::gamma);
    agent_real("learning_rate", &AgentConfig::learning_rate);
    agent_size("replay_capacity", &AgentConfig::replay_capacity);
    agent_size("batch_size", &AgentConfig::batch_size);
    agent_real("epsilon_start", &AgentConfig::epsilon_start);
    agent_real("epsilon_end", &AgentConfig::epsilon_end);
    agent_size("epsilon_decay_steps", &AgentConfig::epsilon_decay_steps);
    agent_size("target_sync_every", &AgentConfig::target_sync_every);
    agent_size("hidden", &AgentConfig::hidden);
    agent_real("reward_clip", &AgentConfig::reward_clip);
    return k;
  }();
  return keys;
}

inline const ConfigKey& find_config_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  throw UsageError("unknown config key '" + std::string(name) + "'");
}

inline void set_config_value(RunConfig& cfg, std::string_view key, const std::string& value) {
  find_config_key(key).set(cfg, value);
}

/// Parses `key = value` lines ('#' starts a comment). Duplicate and unknown
/// keys are errors.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    find_config_key(key);
    if (!seen.insert(key).second) throw UsageError("duplicate config key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline std::pair<std::string, std::string> parse_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw UsageError("override must be key=value, got '" + kv + "'");
  return {detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1))};
}

/// defaults <- config text <- overrides, then validated.
inline RunConfig resolve_config_text(std::string_view text, const std::vector<std::string>& overrides = {}) {
  RunConfig cfg;
  for (const auto& [k, v] : parse_config_text(text)) set_config_value(cfg, k, v);
  for (const auto& o : overrides) {
    const auto [k, v] = parse_override(o);
    set_config_value(cfg, k, v);
  }
  cfg.validate();
  return cfg;
}

inline RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                 const std::vector<std::string>& overrides = {}) {
  std::string text;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw UsageError("cannot read config file " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return resolve_config_text(text, overrides);
}

/// Canonical `key = value` listing of every key, in fixed order.
inline std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) {
    out += k.name;
    out += " = ";
    out += k.get(cfg);
    out += '\n';
  }
  return out;
}

inline std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(dump_config(cfg)); }

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace distortbench
