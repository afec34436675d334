#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "flexcast/battery.hpp"
#include "flexcast/envelope_types.hpp"
#include "flexcast/nominal.hpp"
#include "flexcast/risk.hpp"
#include "flexcast/sim.hpp"

// File formats: CSV for time series and envelopes, JSON for the model
// artifact. All writers are deterministic (shortest round-trip number
// formatting) and atomic (temp file + rename).
namespace flexcast::io {

// Shortest decimal string that parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error("bad numeric field: '" + std::string(s) + "'");
  return v;
}

inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

// Lines of a file, tolerating a trailing newline and CRLF endings.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::string content = read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t nl = content.find('\n', start);
    std::size_t end = (nl == std::string::npos) ? content.size() : nl;
    std::size_t len = end - start;
    if (len > 0 && content[start + len - 1] == '\r') --len;
    if (len > 0) lines.emplace_back(content, start, len);
    start = (nl == std::string::npos) ? content.size() : nl + 1;
  }
  return lines;
}

}  // namespace detail

inline constexpr const char* kTraceHeader =
    "timestamp,t_out,irradiance,t_in,state,u,u_baseline,request,delta_under,delta_over";
inline constexpr const char* kWeatherHeader = "timestamp,t_out,irradiance";

inline void write_trace_csv(const std::filesystem::path& path, const sim::Trace& trace) {
  std::string out(kTraceHeader);
  out += '\n';
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out += format_double(trace.time_h[i]);
    for (double v : {trace.t_out[i], trace.irradiance[i], trace.t_in[i],
                     trace.state[i], trace.u[i], trace.u_baseline[i],
                     trace.request[i], trace.delta_under[i], trace.delta_over[i]}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  atomic_write(path, out);
}

inline sim::Trace read_trace_csv(const std::filesystem::path& path) {
  auto lines = detail::read_lines(path);
  if (lines.empty() || lines[0] != kTraceHeader)
    throw std::runtime_error("not a trace CSV (bad header): " + path.string());
  sim::Trace t;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = detail::split_csv(lines[i]);
    if (f.size() != 10)
      throw std::runtime_error("trace CSV row with " + std::to_string(f.size()) +
                               " fields in " + path.string());
    t.time_h.push_back(parse_double(f[0]));
    t.t_out.push_back(parse_double(f[1]));
    t.irradiance.push_back(parse_double(f[2]));
    t.t_in.push_back(parse_double(f[3]));
    t.state.push_back(parse_double(f[4]));
    t.u.push_back(parse_double(f[5]));
    t.u_baseline.push_back(parse_double(f[6]));
    t.request.push_back(parse_double(f[7]));
    t.delta_under.push_back(parse_double(f[8]));
    t.delta_over.push_back(parse_double(f[9]));
  }
  return t;
}

inline void write_weather_csv(const std::filesystem::path& path,
                              const sim::WeatherSeries& w) {
  std::string out(kWeatherHeader);
  out += '\n';
  for (std::size_t i = 0; i < w.time_h.size(); ++i) {
    out += format_double(w.time_h[i]);
    out += ',';
    out += format_double(w.t_out[i]);
    out += ',';
    out += format_double(w.irradiance[i]);
    out += '\n';
  }
  atomic_write(path, out);
}

inline sim::WeatherSeries read_weather_csv(const std::filesystem::path& path) {
  auto lines = detail::read_lines(path);
  if (lines.empty() || lines[0] != kWeatherHeader)
    throw std::runtime_error("not a weather CSV (bad header): " + path.string());
  sim::WeatherSeries w;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = detail::split_csv(lines[i]);
    if (f.size() != 3)
      throw std::runtime_error("weather CSV row with " + std::to_string(f.size()) +
                               " fields in " + path.string());
    w.time_h.push_back(parse_double(f[0]));
    w.t_out.push_back(parse_double(f[1]));
    w.irradiance.push_back(parse_double(f[2]));
  }
  return w;
}

// Envelope CSV: rows are power levels, columns are start times (hours).
inline void write_envelope_csv(const std::filesystem::path& path,
                               const envelope::FlexibilityEnvelope& env,
                               double hours_per_step) {
  std::string out = "power";
  for (std::size_t t : env.time_grid) {
    out += ',';
    out += format_double(static_cast<double>(t) * hours_per_step);
  }
  out += '\n';
  for (std::size_t i = 0; i < env.power_grid.size(); ++i) {
    out += format_double(env.power_grid[i]);
    for (std::size_t j = 0; j < env.time_grid.size(); ++j) {
      out += ',';
      out += std::to_string(env.at(i, j));
    }
    out += '\n';
  }
  atomic_write(path, out);
}

inline envelope::FlexibilityEnvelope read_envelope_csv(
    const std::filesystem::path& path, double hours_per_step, double alpha,
    int cap_steps) {
  auto lines = detail::read_lines(path);
  if (lines.empty() || !lines[0].starts_with("power,"))
    throw std::runtime_error("not an envelope CSV: " + path.string());
  envelope::FlexibilityEnvelope env;
  env.alpha = alpha;
  env.cap_steps = cap_steps;
  auto header = detail::split_csv(lines[0]);
  for (std::size_t j = 1; j < header.size(); ++j) {
    double hours = parse_double(header[j]);
    env.time_grid.push_back(
        static_cast<std::size_t>(std::llround(hours / hours_per_step)));
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = detail::split_csv(lines[i]);
    if (f.size() != header.size())
      throw std::runtime_error("ragged envelope CSV: " + path.string());
    env.power_grid.push_back(parse_double(f[0]));
    for (std::size_t j = 1; j < f.size(); ++j)
      env.durations.push_back(static_cast<int>(std::llround(parse_double(f[j]))));
  }
  env.check_consistent();
  return env;
}

// Fitted model bundle: everything the envelope and evaluation stages need,
// plus enough metadata to trace a result back to its run.
struct ModelArtifact {
  nominal::NominalModel model;
  battery::SampleSpaces spaces;
  double b_f = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

}  // namespace detail

inline nlohmann::json artifact_to_json(const ModelArtifact& a) {
  nlohmann::json j;
  j["format"] = "flexcast-artifact-v1";
  j["seed"] = a.seed;
  j["config_hash"] = a.config_hash;
  auto& nm = j["nominal"];
  nm["n_lags"] = a.model.n_lags;
  nm["ridge"] = a.model.ridge;
  nm["lengthscales"] = detail::vector_to_json(a.model.lengthscales);
  nm["feat_mean"] = detail::vector_to_json(a.model.feat_mean);
  nm["feat_std"] = detail::vector_to_json(a.model.feat_std);
  nm["target_mean"] = a.model.target_mean;
  nm["target_std"] = a.model.target_std;
  nm["train_inputs"] = detail::matrix_to_json(a.model.train_inputs);
  nm["weights"] = detail::vector_to_json(a.model.weights);
  auto& bt = j["battery"];
  bt["p_plus"] = a.spaces.p_plus;
  bt["p_minus"] = a.spaces.p_minus;
  bt["b_candidates"] = a.spaces.b_candidates;
  bt["b_f"] = a.b_f;
  // Risk-tempered gain bounds at the extreme levels, for inspection only;
  // envelope prediction recomputes them from the sample spaces.
  nlohmann::json wc = nlohmann::json::array();
  std::size_t n = a.spaces.n_total();
  for (std::size_t jj : {std::size_t{1}, n}) {
    auto lv = risk::UncertaintyLevel::from_j(jj, n);
    auto w = risk::worst_case_params(a.spaces, lv);
    nlohmann::json e;
    e["j"] = lv.j;
    e["n_total"] = lv.n_total;
    e["a_plus_tilde"] = w.a_plus_tilde;
    e["a_minus_tilde"] = w.a_minus_tilde;
    e["a_plus_floor"] = w.a_plus_floor;
    e["a_minus_floor"] = w.a_minus_floor;
    wc.push_back(std::move(e));
    if (n == 1) break;
  }
  j["worst_case"] = std::move(wc);
  return j;
}

inline ModelArtifact artifact_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "flexcast-artifact-v1")
    throw std::runtime_error("unrecognized artifact format");
  ModelArtifact a;
  a.seed = j.at("seed").get<std::uint64_t>();
  a.config_hash = j.at("config_hash").get<std::string>();
  const auto& nm = j.at("nominal");
  a.model.n_lags = nm.at("n_lags").get<int>();
  a.model.ridge = nm.at("ridge").get<double>();
  a.model.lengthscales = detail::vector_from_json(nm.at("lengthscales"));
  a.model.feat_mean = detail::vector_from_json(nm.at("feat_mean"));
  a.model.feat_std = detail::vector_from_json(nm.at("feat_std"));
  a.model.target_mean = nm.at("target_mean").get<double>();
  a.model.target_std = nm.at("target_std").get<double>();
  a.model.train_inputs = detail::matrix_from_json(nm.at("train_inputs"));
  a.model.weights = detail::vector_from_json(nm.at("weights"));
  const auto& bt = j.at("battery");
  a.spaces.p_plus = bt.at("p_plus").get<std::vector<double>>();
  a.spaces.p_minus = bt.at("p_minus").get<std::vector<double>>();
  a.spaces.b_candidates = bt.at("b_candidates").get<std::vector<double>>();
  a.b_f = bt.at("b_f").get<double>();
  return a;
}

inline void save_artifact(const std::filesystem::path& path, const ModelArtifact& a) {
  atomic_write(path, artifact_to_json(a).dump(2) + "\n");
}

inline ModelArtifact load_artifact(const std::filesystem::path& path) {
  return artifact_from_json(nlohmann::json::parse(read_file(path)));
}

}  // namespace flexcast::io
