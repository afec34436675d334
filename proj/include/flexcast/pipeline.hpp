#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>

#include "flexcast/battery.hpp"
#include "flexcast/envelope.hpp"
#include "flexcast/io.hpp"
#include "flexcast/nominal.hpp"
#include "flexcast/risk.hpp"
#include "flexcast/sim.hpp"
#include "flexcast/svg.hpp"

// End-to-end orchestration: data generation, model fitting, envelope
// prediction, evaluation against simulated ground truth, and plotting, all
// driven by one TOML config. Exit codes: 0 success, 1 usage/config error,
// 2 runtime failure.
namespace flexcast::pipeline {

// Mistakes a user can fix by editing the config or command line.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  sim::SimConfig sim;
  sim::WeatherParams weather;

  struct TrainingConfig {
    int weeks_nominal = 3;   // request-free weeks for the nominal model
    int weeks_requests = 3;  // weeks with the request schedule active
    sim::ScheduleParams schedule;
  } training;

  struct NominalConfig {
    int n_lags = 12;
    std::vector<double> lengthscale_grid{1.0, 2.0, 4.0, 8.0};
    std::vector<double> ridge_grid{1e-6, 1e-4, 1e-2};
    int max_train_points = 1500;
    double holdout_fraction = 0.25;
  } nominal;

  struct IdentificationConfig {
    double delta = 0.05;         // recovery band around the nominal prediction
    std::string b_mode = "mean"; // mean | max aggregation of b_f candidates
    double sample_floor = 1e-4;
    double percentile_cap = 0.99;
  } identification;

  struct EnvelopeConfig {
    int n_power = 21;
    double power_max = 1.0;
    int start_hour_stride = 1;  // hours between envelope columns
    int cap_steps = 288;        // 24 h at 5-minute steps
    std::vector<std::string> alphas{"1/N", "0.5", "1.0"};
    std::string mode = "ceiling";  // ceiling | strict
    bool seed_first_from_measured = false;
    int eval_days = 3;  // days right after the training period
    int day = 0;        // which eval day the `envelope` command renders
    double eval_epsilon = 0.05;  // comfort-band tolerance for ground truth
  } envelope;

  struct PathsConfig {
    std::string data_dir = "data";
    std::string artifact = "data/model.json";
    std::string out_dir = "out";
  } paths;

  std::string config_hash;  // set by the CLI driver, not a config field

  PipelineConfig() { sim.noise_std = 0.02; }

  int horizon_days() const {
    return 7 * (training.weeks_nominal + training.weeks_requests) +
           envelope.eval_days + 2;
  }

  void validate() const {
    try {
      sim.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    double sph = 60.0 / sim.timestep_minutes;
    if (std::abs(sph - std::round(sph)) > 1e-9)
      throw ConfigError("sim.timestep_minutes must divide an hour");
    if (training.weeks_nominal < 1 || training.weeks_requests < 1)
      throw ConfigError("training.weeks_nominal and weeks_requests must be >= 1");
    if (nominal.n_lags < 1) throw ConfigError("nominal.n_lags must be >= 1");
    if (nominal.lengthscale_grid.empty() || nominal.ridge_grid.empty())
      throw ConfigError("nominal hyperparameter grids must be non-empty");
    if (identification.b_mode != "mean" && identification.b_mode != "max")
      throw ConfigError("identification.b_mode must be 'mean' or 'max'");
    if (!(identification.delta > 0.0))
      throw ConfigError("identification.delta must be positive");
    if (envelope.n_power < 1) throw ConfigError("envelope.n_power must be >= 1");
    if (!(envelope.power_max > 0.0))
      throw ConfigError("envelope.power_max must be positive");
    if (envelope.cap_steps < 1) throw ConfigError("envelope.cap_steps must be >= 1");
    if (envelope.start_hour_stride < 1 || envelope.start_hour_stride > 24)
      throw ConfigError("envelope.start_hour_stride must be in 1..24");
    if (envelope.mode != "ceiling" && envelope.mode != "strict")
      throw ConfigError("envelope.mode must be 'ceiling' or 'strict'");
    if (envelope.alphas.empty()) throw ConfigError("envelope.alphas must be non-empty");
    if (envelope.eval_days < 1) throw ConfigError("envelope.eval_days must be >= 1");
    if (envelope.day < 0 || envelope.day >= envelope.eval_days)
      throw ConfigError("envelope.day must be in 0..eval_days-1");
  }
};

namespace detail {

struct ConfigEntry {
  std::string key;  // dotted: section.name
  std::vector<std::string> values;
  bool is_array = false;
  int line = 0;
};

inline std::string strip(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string unquote(std::string s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\'')))
    return s.substr(1, s.size() - 2);
  return s;
}

// TOML subset: [section] headers (nesting via dots), key = value lines,
// # comments, values as numbers, booleans, quoted strings, or flat arrays.
inline std::vector<ConfigEntry> parse_toml_subset(const std::string& text) {
  std::vector<ConfigEntry> out;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line;
    bool quoted = false;
    char quote = 0;
    for (char c : raw) {
      if (quoted) {
        line += c;
        if (c == quote) quoted = false;
        continue;
      }
      if (c == '"' || c == '\'') {
        quoted = true;
        quote = c;
        line += c;
        continue;
      }
      if (c == '#') break;
      line += c;
    }
    line = strip(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": unterminated section header");
      section = strip(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty section");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = unquote(strip(line.substr(0, eq)));
    std::string val = strip(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key or value");
    ConfigEntry e;
    e.line = lineno;
    e.key = section.empty() ? key : section + "." + key;
    if (val.front() == '[') {
      if (val.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": unterminated array");
      e.is_array = true;
      std::string body = val.substr(1, val.size() - 2);
      std::size_t start = 0;
      while (start <= body.size()) {
        std::size_t comma = body.find(',', start);
        std::string el =
            strip(body.substr(start, comma == std::string::npos
                                         ? std::string::npos
                                         : comma - start));
        if (!el.empty()) e.values.push_back(unquote(el));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    } else {
      e.values.push_back(unquote(val));
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline void apply_config(PipelineConfig& cfg, const std::vector<ConfigEntry>& entries) {
  auto scalar = [](const ConfigEntry& e) -> const std::string& {
    if (e.is_array || e.values.size() != 1)
      throw ConfigError("config key '" + e.key + "': expected a single value");
    return e.values.front();
  };
  auto as_double = [&](const ConfigEntry& e) {
    try {
      return io::parse_double(scalar(e));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + e.key + "': not a number");
    }
  };
  auto as_int = [&](const ConfigEntry& e) {
    double v = as_double(e);
    if (std::abs(v - std::round(v)) > 1e-9)
      throw ConfigError("config key '" + e.key + "': expected an integer");
    return static_cast<int>(std::llround(v));
  };
  auto as_u64 = [&](const ConfigEntry& e) {
    const std::string& s = scalar(e);
    try {
      std::size_t pos = 0;
      std::uint64_t v = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + e.key + "': expected an unsigned integer");
    }
  };
  auto as_bool = [&](const ConfigEntry& e) {
    const std::string& s = scalar(e);
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("config key '" + e.key + "': expected true or false");
  };
  auto as_string = [&](const ConfigEntry& e) { return scalar(e); };
  auto as_dvec = [&](const ConfigEntry& e) {
    std::vector<double> v;
    for (const auto& s : e.values) {
      try {
        v.push_back(io::parse_double(s));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + e.key + "': array element '" + s +
                          "' is not a number");
      }
    }
    return v;
  };
  auto as_svec = [&](const ConfigEntry& e) { return e.values; };

  using Setter = std::function<void(const ConfigEntry&)>;
  const std::unordered_map<std::string, Setter> setters = {
      {"seed", [&](const ConfigEntry& e) { cfg.seed = as_u64(e); }},
      {"sim.thermal_resistance",
       [&](const ConfigEntry& e) { cfg.sim.thermal_resistance = as_double(e); }},
      {"sim.thermal_capacitance",
       [&](const ConfigEntry& e) { cfg.sim.thermal_capacitance = as_double(e); }},
      {"sim.hp_max_thermal_power",
       [&](const ConfigEntry& e) { cfg.sim.hp_max_thermal_power = as_double(e); }},
      {"sim.solar_aperture",
       [&](const ConfigEntry& e) { cfg.sim.solar_aperture = as_double(e); }},
      {"sim.temp_min", [&](const ConfigEntry& e) { cfg.sim.temp_min = as_double(e); }},
      {"sim.temp_max", [&](const ConfigEntry& e) { cfg.sim.temp_max = as_double(e); }},
      {"sim.pi_gain_p", [&](const ConfigEntry& e) { cfg.sim.pi_gain_p = as_double(e); }},
      {"sim.pi_gain_i", [&](const ConfigEntry& e) { cfg.sim.pi_gain_i = as_double(e); }},
      {"sim.setpoint", [&](const ConfigEntry& e) { cfg.sim.setpoint = as_double(e); }},
      {"sim.timestep_minutes",
       [&](const ConfigEntry& e) { cfg.sim.timestep_minutes = as_double(e); }},
      {"sim.noise_std", [&](const ConfigEntry& e) { cfg.sim.noise_std = as_double(e); }},
      {"weather.mean_temp",
       [&](const ConfigEntry& e) { cfg.weather.mean_temp = as_double(e); }},
      {"weather.diurnal_amp",
       [&](const ConfigEntry& e) { cfg.weather.diurnal_amp = as_double(e); }},
      {"weather.walk_std",
       [&](const ConfigEntry& e) { cfg.weather.walk_std = as_double(e); }},
      {"weather.walk_max",
       [&](const ConfigEntry& e) { cfg.weather.walk_max = as_double(e); }},
      {"weather.irr_peak",
       [&](const ConfigEntry& e) { cfg.weather.irr_peak = as_double(e); }},
      {"weather.sunrise_h",
       [&](const ConfigEntry& e) { cfg.weather.sunrise_h = as_double(e); }},
      {"weather.sunset_h",
       [&](const ConfigEntry& e) { cfg.weather.sunset_h = as_double(e); }},
      {"weather.cloud_min",
       [&](const ConfigEntry& e) { cfg.weather.cloud_min = as_double(e); }},
      {"training.weeks_nominal",
       [&](const ConfigEntry& e) { cfg.training.weeks_nominal = as_int(e); }},
      {"training.weeks_requests",
       [&](const ConfigEntry& e) { cfg.training.weeks_requests = as_int(e); }},
      {"training.schedule.min_request_h",
       [&](const ConfigEntry& e) { cfg.training.schedule.min_request_h = as_double(e); }},
      {"training.schedule.max_request_h",
       [&](const ConfigEntry& e) { cfg.training.schedule.max_request_h = as_double(e); }},
      {"training.schedule.min_gap_h",
       [&](const ConfigEntry& e) { cfg.training.schedule.min_gap_h = as_double(e); }},
      {"training.schedule.max_gap_h",
       [&](const ConfigEntry& e) { cfg.training.schedule.max_gap_h = as_double(e); }},
      {"training.schedule.min_magnitude",
       [&](const ConfigEntry& e) { cfg.training.schedule.min_magnitude = as_double(e); }},
      {"training.schedule.max_magnitude",
       [&](const ConfigEntry& e) { cfg.training.schedule.max_magnitude = as_double(e); }},
      {"training.schedule.alternate_signs",
       [&](const ConfigEntry& e) { cfg.training.schedule.alternate_signs = as_bool(e); }},
      {"nominal.n_lags", [&](const ConfigEntry& e) { cfg.nominal.n_lags = as_int(e); }},
      {"nominal.lengthscale_grid",
       [&](const ConfigEntry& e) { cfg.nominal.lengthscale_grid = as_dvec(e); }},
      {"nominal.ridge_grid",
       [&](const ConfigEntry& e) { cfg.nominal.ridge_grid = as_dvec(e); }},
      {"nominal.max_train_points",
       [&](const ConfigEntry& e) { cfg.nominal.max_train_points = as_int(e); }},
      {"nominal.holdout_fraction",
       [&](const ConfigEntry& e) { cfg.nominal.holdout_fraction = as_double(e); }},
      {"identification.delta",
       [&](const ConfigEntry& e) { cfg.identification.delta = as_double(e); }},
      {"identification.b_mode",
       [&](const ConfigEntry& e) { cfg.identification.b_mode = as_string(e); }},
      {"identification.sample_floor",
       [&](const ConfigEntry& e) { cfg.identification.sample_floor = as_double(e); }},
      {"identification.percentile_cap",
       [&](const ConfigEntry& e) { cfg.identification.percentile_cap = as_double(e); }},
      {"envelope.n_power",
       [&](const ConfigEntry& e) { cfg.envelope.n_power = as_int(e); }},
      {"envelope.power_max",
       [&](const ConfigEntry& e) { cfg.envelope.power_max = as_double(e); }},
      {"envelope.start_hour_stride",
       [&](const ConfigEntry& e) { cfg.envelope.start_hour_stride = as_int(e); }},
      {"envelope.cap_steps",
       [&](const ConfigEntry& e) { cfg.envelope.cap_steps = as_int(e); }},
      {"envelope.alphas",
       [&](const ConfigEntry& e) { cfg.envelope.alphas = as_svec(e); }},
      {"envelope.mode", [&](const ConfigEntry& e) { cfg.envelope.mode = as_string(e); }},
      {"envelope.seed_first_from_measured",
       [&](const ConfigEntry& e) { cfg.envelope.seed_first_from_measured = as_bool(e); }},
      {"envelope.eval_days",
       [&](const ConfigEntry& e) { cfg.envelope.eval_days = as_int(e); }},
      {"envelope.day", [&](const ConfigEntry& e) { cfg.envelope.day = as_int(e); }},
      {"envelope.eval_epsilon",
       [&](const ConfigEntry& e) { cfg.envelope.eval_epsilon = as_double(e); }},
      {"paths.data_dir",
       [&](const ConfigEntry& e) { cfg.paths.data_dir = as_string(e); }},
      {"paths.artifact",
       [&](const ConfigEntry& e) { cfg.paths.artifact = as_string(e); }},
      {"paths.out_dir", [&](const ConfigEntry& e) { cfg.paths.out_dir = as_string(e); }},
  };

  for (const auto& e : entries) {
    auto it = setters.find(e.key);
    if (it == setters.end())
      throw ConfigError("unknown config key '" + e.key + "' (line " +
                        std::to_string(e.line) + ")");
    it->second(e);
  }
}

}  // namespace detail

// Canonical TOML serialization; parse(serialize(cfg)) reproduces cfg and
// serialize is a fixed-order, shortest-number format, so round-trips are
// byte-stable.
inline std::string serialize_config(const PipelineConfig& cfg) {
  auto d = [](double v) { return io::format_double(v); };
  auto dvec = [&](const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i)
      s += (i ? ", " : "") + d(v[i]);
    return s + "]";
  };
  auto svec = [](const std::vector<std::string>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i)
      s += (i ? std::string(", ") : std::string()) + "\"" + v[i] + "\"";
    return s + "]";
  };
  std::string s;
  s += "seed = " + std::to_string(cfg.seed) + "\n";
  s += "\n[sim]\n";
  s += "thermal_resistance = " + d(cfg.sim.thermal_resistance) + "\n";
  s += "thermal_capacitance = " + d(cfg.sim.thermal_capacitance) + "\n";
  s += "hp_max_thermal_power = " + d(cfg.sim.hp_max_thermal_power) + "\n";
  s += "solar_aperture = " + d(cfg.sim.solar_aperture) + "\n";
  s += "temp_min = " + d(cfg.sim.temp_min) + "\n";
  s += "temp_max = " + d(cfg.sim.temp_max) + "\n";
  s += "pi_gain_p = " + d(cfg.sim.pi_gain_p) + "\n";
  s += "pi_gain_i = " + d(cfg.sim.pi_gain_i) + "\n";
  s += "setpoint = " + d(cfg.sim.setpoint) + "\n";
  s += "timestep_minutes = " + d(cfg.sim.timestep_minutes) + "\n";
  s += "noise_std = " + d(cfg.sim.noise_std) + "\n";
  s += "\n[weather]\n";
  s += "mean_temp = " + d(cfg.weather.mean_temp) + "\n";
  s += "diurnal_amp = " + d(cfg.weather.diurnal_amp) + "\n";
  s += "walk_std = " + d(cfg.weather.walk_std) + "\n";
  s += "walk_max = " + d(cfg.weather.walk_max) + "\n";
  s += "irr_peak = " + d(cfg.weather.irr_peak) + "\n";
  s += "sunrise_h = " + d(cfg.weather.sunrise_h) + "\n";
  s += "sunset_h = " + d(cfg.weather.sunset_h) + "\n";
  s += "cloud_min = " + d(cfg.weather.cloud_min) + "\n";
  s += "\n[training]\n";
  s += "weeks_nominal = " + std::to_string(cfg.training.weeks_nominal) + "\n";
  s += "weeks_requests = " + std::to_string(cfg.training.weeks_requests) + "\n";
  s += "\n[training.schedule]\n";
  s += "min_request_h = " + d(cfg.training.schedule.min_request_h) + "\n";
  s += "max_request_h = " + d(cfg.training.schedule.max_request_h) + "\n";
  s += "min_gap_h = " + d(cfg.training.schedule.min_gap_h) + "\n";
  s += "max_gap_h = " + d(cfg.training.schedule.max_gap_h) + "\n";
  s += "min_magnitude = " + d(cfg.training.schedule.min_magnitude) + "\n";
  s += "max_magnitude = " + d(cfg.training.schedule.max_magnitude) + "\n";
  s += std::string("alternate_signs = ") +
       (cfg.training.schedule.alternate_signs ? "true" : "false") + "\n";
  s += "\n[nominal]\n";
  s += "n_lags = " + std::to_string(cfg.nominal.n_lags) + "\n";
  s += "lengthscale_grid = " + dvec(cfg.nominal.lengthscale_grid) + "\n";
  s += "ridge_grid = " + dvec(cfg.nominal.ridge_grid) + "\n";
  s += "max_train_points = " + std::to_string(cfg.nominal.max_train_points) + "\n";
  s += "holdout_fraction = " + d(cfg.nominal.holdout_fraction) + "\n";
  s += "\n[identification]\n";
  s += "delta = " + d(cfg.identification.delta) + "\n";
  s += "b_mode = \"" + cfg.identification.b_mode + "\"\n";
  s += "sample_floor = " + d(cfg.identification.sample_floor) + "\n";
  s += "percentile_cap = " + d(cfg.identification.percentile_cap) + "\n";
  s += "\n[envelope]\n";
  s += "n_power = " + std::to_string(cfg.envelope.n_power) + "\n";
  s += "power_max = " + d(cfg.envelope.power_max) + "\n";
  s += "start_hour_stride = " + std::to_string(cfg.envelope.start_hour_stride) + "\n";
  s += "cap_steps = " + std::to_string(cfg.envelope.cap_steps) + "\n";
  s += "alphas = " + svec(cfg.envelope.alphas) + "\n";
  s += "mode = \"" + cfg.envelope.mode + "\"\n";
  s += std::string("seed_first_from_measured = ") +
       (cfg.envelope.seed_first_from_measured ? "true" : "false") + "\n";
  s += "eval_days = " + std::to_string(cfg.envelope.eval_days) + "\n";
  s += "day = " + std::to_string(cfg.envelope.day) + "\n";
  s += "eval_epsilon = " + d(cfg.envelope.eval_epsilon) + "\n";
  s += "\n[paths]\n";
  s += "data_dir = \"" + cfg.paths.data_dir + "\"\n";
  s += "artifact = \"" + cfg.paths.artifact + "\"\n";
  s += "out_dir = \"" + cfg.paths.out_dir + "\"\n";
  return s;
}

inline void load_config_file(PipelineConfig& cfg, const std::string& path) {
  if (!std::filesystem::exists(path))
    throw ConfigError("config file not found: " + path);
  detail::apply_config(cfg, detail::parse_toml_subset(io::read_file(path)));
}

// alpha strings: "0.5", "1.0", or fractions "j/N" with a literal N ("1/N",
// "3/N") or explicit denominator ("220/440").
inline risk::UncertaintyLevel resolve_alpha(const std::string& text,
                                            std::size_t n_total) {
  try {
    auto slash = text.find('/');
    if (slash != std::string::npos) {
      std::string num = text.substr(0, slash), den = text.substr(slash + 1);
      std::size_t j = static_cast<std::size_t>(std::stoull(num));
      if (den == "N") return risk::UncertaintyLevel::from_j(j, n_total);
      double alpha = static_cast<double>(j) / io::parse_double(den);
      return risk::UncertaintyLevel::from_alpha(alpha, n_total);
    }
    return risk::UncertaintyLevel::from_alpha(io::parse_double(text), n_total);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("alpha '" + text + "': " + e.what());
  }
}

inline std::string alpha_label(const risk::UncertaintyLevel& lv) {
  return "alpha_" + std::to_string(lv.j) + "_" + std::to_string(lv.n_total);
}

inline std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::vector<double> make_power_grid(int n_power, double power_max) {
  std::vector<double> p(static_cast<std::size_t>(n_power));
  if (n_power == 1) return p;  // single level: zero request
  int span = n_power - 1;
  for (int i = 0; i < n_power; ++i)
    p[static_cast<std::size_t>(i)] = power_max * (2.0 * i - span) / span;
  return p;
}

namespace detail {

struct Layout {
  std::size_t steps_nominal = 0;   // [0, steps_nominal) request-free
  std::size_t steps_requests = 0;  // request window length
  std::size_t eval_start = 0;      // first step of the evaluation period
};

inline Layout layout(const PipelineConfig& cfg) {
  auto spd = static_cast<std::size_t>(cfg.sim.steps_per_day());
  Layout l;
  l.steps_nominal = static_cast<std::size_t>(cfg.training.weeks_nominal) * 7 * spd;
  l.steps_requests = static_cast<std::size_t>(cfg.training.weeks_requests) * 7 * spd;
  l.eval_start = l.steps_nominal + l.steps_requests;
  return l;
}

inline std::filesystem::path data_file(const PipelineConfig& cfg, const char* name) {
  return std::filesystem::path(cfg.paths.data_dir) / name;
}

inline sim::WeatherSeries load_weather(const PipelineConfig& cfg) {
  auto path = data_file(cfg, "weather.csv");
  if (!std::filesystem::exists(path))
    throw std::runtime_error("missing " + path.string() +
                             "; run `flexcast generate` first");
  return io::read_weather_csv(path);
}

inline sim::Trace load_trace(const PipelineConfig& cfg, const char* name) {
  auto path = data_file(cfg, name);
  if (!std::filesystem::exists(path))
    throw std::runtime_error("missing " + path.string() +
                             "; run `flexcast generate` first");
  return io::read_trace_csv(path);
}

inline io::ModelArtifact load_model(const PipelineConfig& cfg) {
  if (!std::filesystem::exists(cfg.paths.artifact))
    throw std::runtime_error("missing model artifact " + cfg.paths.artifact +
                             "; run `flexcast fit` first");
  return io::load_artifact(cfg.paths.artifact);
}

// Start steps of the envelope columns for consecutive eval days.
inline std::vector<std::size_t> eval_time_grid(const PipelineConfig& cfg,
                                               int first_day, int n_days) {
  Layout l = layout(cfg);
  auto spd = static_cast<std::size_t>(cfg.sim.steps_per_day());
  auto sph = static_cast<std::size_t>(cfg.sim.steps_per_hour());
  std::vector<std::size_t> grid;
  for (int d = first_day; d < first_day + n_days; ++d)
    for (int h = 0; h < 24; h += cfg.envelope.start_hour_stride)
      grid.push_back(l.eval_start + static_cast<std::size_t>(d) * spd +
                     static_cast<std::size_t>(h) * sph);
  return grid;
}

inline envelope::FeasibilityMode mode_of(const PipelineConfig& cfg) {
  return cfg.envelope.mode == "strict" ? envelope::FeasibilityMode::kStrict
                                       : envelope::FeasibilityMode::kCeiling;
}

inline sim::Trace noise_free_baseline(const PipelineConfig& cfg,
                                      const sim::WeatherSeries& weather) {
  sim::SimConfig nf = cfg.sim;
  nf.noise_std = 0.0;
  return sim::simulate(nf, weather, {}, cfg.seed);
}

inline battery::IdentifyOptions identify_options(const PipelineConfig& cfg) {
  battery::IdentifyOptions opt;
  opt.extraction.delta = cfg.identification.delta;
  opt.sampling.sample_floor = cfg.identification.sample_floor;
  opt.percentile_cap = cfg.identification.percentile_cap;
  opt.b_mode = cfg.identification.b_mode == "max" ? battery::BfAggregation::kMax
                                                  : battery::BfAggregation::kMean;
  return opt;
}

}  // namespace detail

inline void cmd_generate(const PipelineConfig& cfg) {
  cfg.validate();
  sim::WeatherSeries weather = sim::generate_weather(
      cfg.seed, cfg.horizon_days(), cfg.sim.timestep_minutes, cfg.weather);
  detail::Layout l = detail::layout(cfg);

  sim::RequestSchedule schedule = sim::generate_training_schedule(
      cfg.seed, l.steps_requests, cfg.sim.steps_per_hour(), cfg.training.schedule);
  for (auto& seg : schedule.segments) seg.start += l.steps_nominal;

  sim::Trace trace = sim::simulate(cfg.sim, weather, schedule, cfg.seed);
  io::write_weather_csv(detail::data_file(cfg, "weather.csv"), weather);
  io::write_trace_csv(detail::data_file(cfg, "nominal.csv"),
                      trace.slice(0, l.steps_nominal));
  io::write_trace_csv(detail::data_file(cfg, "requests.csv"),
                      trace.slice(l.steps_nominal, l.eval_start));
  std::cout << "generate: " << weather.size() << " weather steps, "
            << l.steps_nominal << " nominal + " << l.steps_requests
            << " request rows, " << schedule.segments.size()
            << " request segments\n";
}

inline io::ModelArtifact cmd_fit(const PipelineConfig& cfg) {
  cfg.validate();
  sim::WeatherSeries weather = detail::load_weather(cfg);
  sim::Trace nominal_trace = detail::load_trace(cfg, "nominal.csv");
  sim::Trace request_trace = detail::load_trace(cfg, "requests.csv");
  detail::Layout l = detail::layout(cfg);

  nominal::FeatureSet fs = nominal::build_features(nominal_trace, cfg.nominal.n_lags);
  nominal::FeatureSet sub =
      nominal::subsample(fs, static_cast<std::size_t>(cfg.nominal.max_train_points));
  nominal::GridSearchResult gs = nominal::grid_search_fit(
      sub, cfg.nominal.lengthscale_grid, cfg.nominal.ridge_grid, cfg.nominal.n_lags,
      cfg.nominal.holdout_fraction);

  std::vector<double> f_full = nominal::predict_series(gs.model, weather);
  std::vector<double> f_requests(
      f_full.begin() + static_cast<std::ptrdiff_t>(l.steps_nominal),
      f_full.begin() + static_cast<std::ptrdiff_t>(l.eval_start));

  battery::IdentificationResult ident =
      battery::identify(std::span(&request_trace, 1), std::span(&f_requests, 1),
                        detail::identify_options(cfg));

  io::ModelArtifact artifact;
  artifact.model = gs.model;
  artifact.spaces = ident.spaces;
  artifact.b_f = ident.b_f;
  artifact.seed = cfg.seed;
  artifact.config_hash = cfg.config_hash;
  io::save_artifact(cfg.paths.artifact, artifact);

  std::cout << "fit: lengthscale " << io::format_double(gs.lengthscale) << ", ridge "
            << io::format_double(gs.ridge) << ", holdout rmse "
            << io::format_double(gs.holdout_rmse) << "\n"
            << "fit: " << ident.spaces.p_plus.size() << " a+ samples, "
            << ident.spaces.p_minus.size() << " a- samples, "
            << ident.spaces.b_candidates.size() << " b_f candidates, b_f "
            << io::format_double(ident.b_f) << "\n";
  return artifact;
}

inline void cmd_envelope(const PipelineConfig& cfg) {
  cfg.validate();
  io::ModelArtifact artifact = detail::load_model(cfg);
  sim::WeatherSeries weather = detail::load_weather(cfg);
  std::vector<double> f_series = nominal::predict_series(artifact.model, weather);

  std::size_t n_total = artifact.spaces.n_total();
  std::vector<risk::UncertaintyLevel> levels;
  for (const auto& a : cfg.envelope.alphas) levels.push_back(resolve_alpha(a, n_total));

  std::vector<double> power_grid =
      make_power_grid(cfg.envelope.n_power, cfg.envelope.power_max);
  std::vector<std::size_t> time_grid = detail::eval_time_grid(cfg, cfg.envelope.day, 1);

  envelope::PredictOptions opt;
  opt.mode = detail::mode_of(cfg);
  if (cfg.envelope.seed_first_from_measured) {
    sim::Trace baseline = detail::noise_free_baseline(cfg, weather);
    opt.measured_s0_first = baseline.state[time_grid.front()];
  }

  std::filesystem::path out(cfg.paths.out_dir);
  double hps = cfg.sim.dt_hours();
  for (const auto& lv : levels) {
    envelope::FlexibilityEnvelope env = envelope::predict_envelope(
        f_series, artifact.spaces, artifact.b_f, lv, power_grid, time_grid,
        cfg.envelope.cap_steps, opt);
    std::string stem =
        "envelope_" + alpha_label(lv) + "_day" + std::to_string(cfg.envelope.day);
    io::write_envelope_csv(out / (stem + ".csv"), env, hps);
    io::atomic_write(out / (stem + ".svg"), svg::heatmap(env, stem, hps));
    std::cout << "envelope: wrote " << (out / (stem + ".csv")).string() << "\n";
  }
}

inline void cmd_evaluate(const PipelineConfig& cfg) {
  cfg.validate();
  io::ModelArtifact artifact = detail::load_model(cfg);
  sim::WeatherSeries weather = detail::load_weather(cfg);
  std::vector<double> f_series = nominal::predict_series(artifact.model, weather);

  std::size_t n_total = artifact.spaces.n_total();
  std::vector<risk::UncertaintyLevel> levels;
  for (const auto& a : cfg.envelope.alphas) levels.push_back(resolve_alpha(a, n_total));

  std::vector<double> power_grid =
      make_power_grid(cfg.envelope.n_power, cfg.envelope.power_max);
  std::vector<std::size_t> time_grid =
      detail::eval_time_grid(cfg, 0, cfg.envelope.eval_days);

  sim::SimConfig nf = cfg.sim;
  nf.noise_std = 0.0;
  sim::Trace baseline = detail::noise_free_baseline(cfg, weather);
  envelope::FlexibilityEnvelope truth =
      sim::true_envelope(nf, weather, baseline, power_grid, time_grid,
                         cfg.envelope.cap_steps, cfg.envelope.eval_epsilon);

  std::filesystem::path out(cfg.paths.out_dir);
  double hps = cfg.sim.dt_hours();
  io::write_envelope_csv(out / "truth.csv", truth, hps);

  envelope::PredictOptions opt;
  opt.mode = detail::mode_of(cfg);
  if (cfg.envelope.seed_first_from_measured)
    opt.measured_s0_first = baseline.state[time_grid.front()];

  auto spd = static_cast<std::size_t>(cfg.sim.steps_per_day());
  std::string metrics_csv = "alpha,j,n_total,infeasible_fraction,mean_abs_error\n";
  std::string per_day_csv = "alpha,day,infeasible_fraction,mean_abs_error\n";
  for (const auto& lv : levels) {
    envelope::FlexibilityEnvelope pred = envelope::predict_envelope(
        f_series, artifact.spaces, artifact.b_f, lv, power_grid, time_grid,
        cfg.envelope.cap_steps, opt);
    io::write_envelope_csv(out / ("envelope_" + alpha_label(lv) + ".csv"), pred, hps);

    std::string scatter = "predicted,true\n";
    for (std::size_t c = 0; c < pred.durations.size(); ++c)
      scatter += std::to_string(pred.durations[c]) + "," +
                 std::to_string(truth.durations[c]) + "\n";
    io::atomic_write(out / ("scatter_" + alpha_label(lv) + ".csv"), scatter);

    envelope::EnvelopeMetrics m = envelope::evaluate(pred, truth, spd);
    metrics_csv += io::format_double(lv.alpha()) + "," + std::to_string(lv.j) + "," +
                   std::to_string(lv.n_total) + "," +
                   io::format_double(m.infeasible_fraction) + "," +
                   io::format_double(m.mean_abs_error) + "\n";
    for (std::size_t d = 0; d < m.days.size(); ++d)
      per_day_csv += io::format_double(lv.alpha()) + "," + std::to_string(m.days[d]) +
                     "," + io::format_double(m.infeasible_per_day[d]) + "," +
                     io::format_double(m.mae_per_day[d]) + "\n";
    std::cout << "evaluate: alpha " << lv.j << "/" << lv.n_total << "  infeasible "
              << io::format_double(m.infeasible_fraction) << "  mae "
              << io::format_double(m.mean_abs_error) << " steps\n";
  }
  io::atomic_write(out / "metrics.csv", metrics_csv);
  io::atomic_write(out / "metrics_per_day.csv", per_day_csv);
}

inline void cmd_plot(const PipelineConfig& cfg) {
  cfg.validate();
  std::filesystem::path out(cfg.paths.out_dir);
  if (!std::filesystem::exists(out))
    throw std::runtime_error("missing output dir " + out.string() +
                             "; run `flexcast envelope` or `evaluate` first");
  std::vector<std::filesystem::path> csvs;
  for (const auto& entry : std::filesystem::directory_iterator(out)) {
    if (entry.path().extension() != ".csv") continue;
    std::ifstream in(entry.path());
    std::string head;
    std::getline(in, head);
    if (head.starts_with("power,")) csvs.push_back(entry.path());
  }
  std::sort(csvs.begin(), csvs.end());
  double hps = cfg.sim.dt_hours();
  for (const auto& path : csvs) {
    envelope::FlexibilityEnvelope env = io::read_envelope_csv(
        path, hps, std::numeric_limits<double>::quiet_NaN(), cfg.envelope.cap_steps);
    std::filesystem::path svg_path = path;
    svg_path.replace_extension(".svg");
    io::atomic_write(svg_path, svg::heatmap(env, path.stem().string(), hps));
    std::cout << "plot: wrote " << svg_path.string() << "\n";
  }
}

inline void run_all(const PipelineConfig& cfg) {
  cmd_generate(cfg);
  cmd_fit(cfg);
  cmd_envelope(cfg);
  cmd_evaluate(cfg);
  cmd_plot(cfg);
}

inline void attach_options(CLI::App& app, PipelineConfig& cfg) {
  app.add_option("--seed", cfg.seed, "master random seed")->capture_default_str();
  app.add_option("--out,--paths.out_dir", cfg.paths.out_dir, "output directory")
      ->capture_default_str();
  app.add_option("--data-dir,--paths.data_dir", cfg.paths.data_dir, "data directory")
      ->capture_default_str();
  app.add_option("--artifact,--paths.artifact", cfg.paths.artifact,
                 "model artifact path")->capture_default_str();
  app.add_option("--alpha,--envelope.alphas", cfg.envelope.alphas,
                 "risk levels, e.g. 1/N,0.5,1.0")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--day,--envelope.day", cfg.envelope.day,
                 "eval day rendered by the envelope command")->capture_default_str();
  app.add_option("--eval-days,--envelope.eval_days", cfg.envelope.eval_days,
                 "number of evaluation days")->capture_default_str();
  app.add_option("--mode,--envelope.mode", cfg.envelope.mode,
                 "feasibility mode: ceiling|strict")->capture_default_str();
}

// CLI entry point; args exclude the program name. All config keys live in
// the TOML file; the command line carries the subcommand plus a few common
// overrides, which always win over the file.
inline int run(const std::vector<std::string>& args) {
  PipelineConfig cfg;

  bool want_help = false;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--help" || args[i] == "-h") want_help = true;
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (!config_path.empty() && !want_help) {
    try {
      load_config_file(cfg, config_path);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 1;
    }
  }

  CLI::App app{"flexibility forecasting for buildings as virtual batteries",
               "flexcast"};
  attach_options(app, cfg);
  std::string config_sink;
  app.add_option("--config", config_sink, "TOML config file");
  app.require_subcommand(1);

  CLI::App* sub_generate = app.add_subcommand("generate", "simulate training data");
  CLI::App* sub_fit = app.add_subcommand("fit", "fit nominal model and identify gains");
  CLI::App* sub_envelope =
      app.add_subcommand("envelope", "predict flexibility envelopes for one day");
  CLI::App* sub_evaluate =
      app.add_subcommand("evaluate", "score envelopes against simulated truth");
  CLI::App* sub_plot =
      app.add_subcommand("plot", "render SVG heatmaps for envelope CSVs");
  CLI::App* sub_run_all = app.add_subcommand("run-all", "run the whole pipeline");
  for (CLI::App* s :
       {sub_generate, sub_fit, sub_envelope, sub_evaluate, sub_plot, sub_run_all})
    s->fallthrough();

  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.push_back("flexcast");
  for (const auto& a : args) argv_storage.push_back(a);
  std::vector<char*> argv;
  for (auto& s : argv_storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  cfg.config_hash = fnv1a_hex(serialize_config(cfg));
  try {
    if (sub_generate->parsed()) cmd_generate(cfg);
    if (sub_fit->parsed()) cmd_fit(cfg);
    if (sub_envelope->parsed()) cmd_envelope(cfg);
    if (sub_evaluate->parsed()) cmd_evaluate(cfg);
    if (sub_plot->parsed()) cmd_plot(cfg);
    if (sub_run_all->parsed()) run_all(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace flexcast::pipeline
