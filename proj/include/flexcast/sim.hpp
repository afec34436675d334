#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flexcast/envelope_types.hpp"
#include "flexcast/parallel.hpp"
#include "flexcast/rng.hpp"

// Single-zone RC building with a heat pump and a PI comfort controller.
// Generates controller logs for model identification and doubles as the
// ground-truth oracle when evaluating predicted flexibility envelopes.
namespace flexcast::sim {

struct SimConfig {
  double thermal_resistance = 10.0;    // K/kW
  double thermal_capacitance = 1.0;    // kWh/K
  double hp_max_thermal_power = 5.0;   // kW
  double solar_aperture = 2.0;         // m^2 effective
  double temp_min = 19.0;              // degC
  double temp_max = 24.0;              // degC
  double pi_gain_p = 0.4;              // 1/K
  double pi_gain_i = 0.15;             // 1/(K*h), overdamped for the default plant
  double setpoint = 21.0;              // degC
  double timestep_minutes = 5.0;
  double noise_std = 0.0;              // K per step

  double dt_hours() const { return timestep_minutes / 60.0; }
  int steps_per_hour() const {
    return static_cast<int>(std::lround(60.0 / timestep_minutes));
  }
  int steps_per_day() const { return 24 * steps_per_hour(); }

  void validate() const {
    if (!(thermal_resistance > 0.0) || !(thermal_capacitance > 0.0) ||
        !(hp_max_thermal_power > 0.0) || !(timestep_minutes > 0.0))
      throw std::invalid_argument("SimConfig: R, C, P_max and timestep must be positive");
    if (!(temp_min < setpoint && setpoint < temp_max))
      throw std::invalid_argument("SimConfig: require temp_min < setpoint < temp_max");
    if (noise_std < 0.0 || solar_aperture < 0.0)
      throw std::invalid_argument("SimConfig: noise_std and solar_aperture must be >= 0");
  }
};

struct WeatherSeries {
  std::vector<double> time_h;      // hours since series start, uniform grid
  std::vector<double> t_out;       // degC
  std::vector<double> irradiance;  // W/m^2

  std::size_t size() const { return time_h.size(); }

  void validate() const {
    if (t_out.size() != time_h.size() || irradiance.size() != time_h.size())
      throw std::invalid_argument("WeatherSeries: column lengths differ");
    if (time_h.size() < 2) return;
    double dt = time_h[1] - time_h[0];
    for (std::size_t i = 0; i + 1 < time_h.size(); ++i) {
      double d = time_h[i + 1] - time_h[i];
      if (!(d > 0.0) || std::abs(d - dt) > 1e-9)
        throw std::invalid_argument("WeatherSeries: timestamps not uniformly increasing");
    }
    for (std::size_t i = 0; i < time_h.size(); ++i)
      if (!std::isfinite(t_out[i]) || !std::isfinite(irradiance[i]))
        throw std::invalid_argument("WeatherSeries: non-finite value at step " +
                                    std::to_string(i));
  }
};

// Controller log of one simulation run. Carries the weather columns too, so
// a trace file is self-contained for downstream feature building.
struct Trace {
  std::vector<double> time_h;
  std::vector<double> t_out;
  std::vector<double> irradiance;
  std::vector<double> t_in;        // degC
  std::vector<double> state;       // s_t in [0,1]
  std::vector<double> u;           // applied heat pump input fraction
  std::vector<double> u_baseline;  // request-free twin input fraction
  std::vector<double> request;     // r_t, zero outside request segments
  std::vector<double> delta_under; // hours
  std::vector<double> delta_over;  // hours

  std::size_t size() const { return time_h.size(); }

  Trace slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size())
      throw std::out_of_range("Trace::slice: bad range");
    Trace out;
    auto cut = [&](const std::vector<double>& v) {
      return std::vector<double>(v.begin() + begin, v.begin() + end);
    };
    out.time_h = cut(time_h);
    out.t_out = cut(t_out);
    out.irradiance = cut(irradiance);
    out.t_in = cut(t_in);
    out.state = cut(state);
    out.u = cut(u);
    out.u_baseline = cut(u_baseline);
    out.request = cut(request);
    out.delta_under = cut(delta_under);
    out.delta_over = cut(delta_over);
    return out;
  }
};

struct RequestSchedule {
  struct Segment {
    std::size_t start = 0;
    std::size_t duration = 0;  // steps
    double value = 0.0;        // input-fraction request, constant over the segment
  };
  std::vector<Segment> segments;

  void validate(std::size_t horizon) const {
    std::size_t prev_end = 0;
    bool first = true;
    for (const auto& s : segments) {
      if (s.duration == 0) throw std::invalid_argument("RequestSchedule: empty segment");
      if (!first && s.start < prev_end)
        throw std::invalid_argument("RequestSchedule: overlapping segments");
      if (s.start + s.duration > horizon)
        throw std::invalid_argument("RequestSchedule: segment exceeds horizon");
      if (s.value == 0.0)
        throw std::invalid_argument("RequestSchedule: zero request value");
      prev_end = s.start + s.duration;
      first = false;
    }
  }

  // Per-step request vector (0 outside segments).
  std::vector<double> expand(std::size_t horizon) const {
    std::vector<double> r(horizon, 0.0);
    for (const auto& s : segments)
      for (std::size_t t = s.start; t < s.start + s.duration && t < horizon; ++t)
        r[t] = s.value;
    return r;
  }
};

// Availability times before hitting the comfort band edges: time at minimum
// power until the lower bound, time at maximum power until the upper bound.
// Negative values mean the temperature is already outside the band.
inline std::pair<double, double> state_times(double t_in, double t_out,
                                             const SimConfig& cfg) {
  double p_loss = (t_in - t_out) / cfg.thermal_resistance;
  if (!(p_loss > 0.0))
    throw std::domain_error("state_times: P_loss <= 0 (out-of-season data)");
  if (!(cfg.hp_max_thermal_power - p_loss > 0.0))
    throw std::domain_error("state_times: losses exceed heat pump capacity");
  double c = cfg.thermal_capacitance;
  double under = c * (t_in - cfg.temp_min) / p_loss;
  double over = c * (cfg.temp_max - t_in) / (cfg.hp_max_thermal_power - p_loss);
  return {under, over};
}

// Normalized storage state: fraction of the total availability budget that
// sits on the "can still reduce power" side.
inline double state_from_times(double delta_under, double delta_over) {
  if (delta_under < 0.0 || delta_over < 0.0)
    throw std::invalid_argument("state_from_times: negative availability time");
  double total = delta_under + delta_over;
  if (!(total > 0.0))
    throw std::invalid_argument("state_from_times: both availability times zero");
  return delta_under / total;
}

namespace detail {

inline double solar_kw(const SimConfig& cfg, double irr_wm2) {
  return cfg.solar_aperture * irr_wm2 / 1000.0;
}

// Forward-Euler plant update (deterministic part).
inline double plant_next(double t_in, double t_out, double irr_wm2, double u,
                         const SimConfig& cfg) {
  double q = (t_out - t_in) / cfg.thermal_resistance +
             cfg.hp_max_thermal_power * u + solar_kw(cfg, irr_wm2);
  return t_in + cfg.dt_hours() / cfg.thermal_capacitance * q;
}

// Input that lands the next temperature exactly on `bound` (before actuator
// clamping).
inline double hold_input(double t_in, double t_out, double irr_wm2, double bound,
                         const SimConfig& cfg) {
  double u = ((bound - t_in) * cfg.thermal_capacitance / cfg.dt_hours() -
              (t_out - t_in) / cfg.thermal_resistance - solar_kw(cfg, irr_wm2)) /
             cfg.hp_max_thermal_power;
  return std::clamp(u, 0.0, 1.0);
}

struct PiController {
  double integral = 0.0;  // K*h

  // Clamped output with conditional integration as anti-windup.
  double step(double t_in, const SimConfig& cfg) {
    double err = cfg.setpoint - t_in;
    double cand = integral + err * cfg.dt_hours();
    double u = cfg.pi_gain_p * err + cfg.pi_gain_i * cand;
    if (u >= 0.0 && u <= 1.0) integral = cand;
    return std::clamp(u, 0.0, 1.0);
  }
};

inline double recorded_state(double t_in, double t_out, const SimConfig& cfg,
                             double* d_under, double* d_over) {
  auto [under, over] = state_times(t_in, t_out, cfg);
  // Process noise can push the temperature marginally past a band edge;
  // availability cannot go negative.
  under = std::max(under, 0.0);
  over = std::max(over, 0.0);
  *d_under = under;
  *d_over = over;
  return state_from_times(under, over);
}

}  // namespace detail

// Runs the closed-loop building. Outside request segments the PI controller
// tracks the setpoint; inside a segment the applied input is
// clamp(baseline + r, 0, 1), overridden by a bound-holding input in any step
// where following the request would cross a comfort bound. The baseline
// column comes from a noise-free request-free twin on the same weather.
inline Trace simulate(const SimConfig& cfg, const WeatherSeries& weather,
                      const RequestSchedule& schedule,
                      std::uint64_t noise_seed = 0) {
  cfg.validate();
  weather.validate();
  std::size_t n = weather.size();
  if (n == 0) throw std::invalid_argument("simulate: empty weather");
  schedule.validate(n);

  // Request-free twin: the baseline prediction the requests are relative to.
  std::vector<double> base_u(n), base_t(n);
  {
    detail::PiController pi;
    double t = cfg.setpoint;
    for (std::size_t i = 0; i < n; ++i) {
      base_t[i] = t;
      base_u[i] = pi.step(t, cfg);
      t = detail::plant_next(t, weather.t_out[i], weather.irradiance[i], base_u[i], cfg);
    }
  }

  std::vector<double> req = schedule.expand(n);
  Rng noise = Rng::stream(noise_seed, "sim-noise");

  Trace tr;
  for (auto* col : {&tr.time_h, &tr.t_out, &tr.irradiance, &tr.t_in, &tr.state,
                    &tr.u, &tr.u_baseline, &tr.request, &tr.delta_under,
                    &tr.delta_over})
    col->resize(n);

  detail::PiController pi;
  double t = cfg.setpoint;
  for (std::size_t i = 0; i < n; ++i) {
    double t_out = weather.t_out[i];
    double irr = weather.irradiance[i];
    double u;
    if (req[i] != 0.0) {
      // PI integrator frozen while the request drives the input.
      u = std::clamp(base_u[i] + req[i], 0.0, 1.0);
      double next = detail::plant_next(t, t_out, irr, u, cfg);
      if (next > cfg.temp_max)
        u = detail::hold_input(t, t_out, irr, cfg.temp_max, cfg);
      else if (next < cfg.temp_min)
        u = detail::hold_input(t, t_out, irr, cfg.temp_min, cfg);
    } else {
      u = pi.step(t, cfg);
    }

    tr.time_h[i] = weather.time_h[i];
    tr.t_out[i] = t_out;
    tr.irradiance[i] = irr;
    tr.t_in[i] = t;
    tr.u[i] = u;
    tr.u_baseline[i] = schedule.segments.empty() ? u : base_u[i];
    tr.request[i] = req[i];
    tr.state[i] =
        detail::recorded_state(t, t_out, cfg, &tr.delta_under[i], &tr.delta_over[i]);

    t = detail::plant_next(t, t_out, irr, u, cfg);
    if (cfg.noise_std > 0.0) t += cfg.noise_std * noise.normal();
  }
  return tr;
}

struct WeatherParams {
  double mean_temp = 1.0;    // degC
  double diurnal_amp = 4.0;  // K
  double walk_std = 0.06;    // K per step
  double walk_max = 7.0;     // K, reflecting barrier
  double irr_peak = 280.0;   // W/m^2
  double sunrise_h = 8.25;
  double sunset_h = 16.75;
  double cloud_min = 0.25;   // lower bound of the daily clear-sky factor
};

// Synthetic winter weather: diurnal sinusoid plus a slow bounded random walk
// for temperature, clipped half-sine irradiance with a per-day cloud factor.
// The preset keeps the outdoor temperature below the comfort band so heating
// is always active.
inline WeatherSeries generate_weather(std::uint64_t seed, int days,
                                      double timestep_minutes = 5.0,
                                      const WeatherParams& p = {}) {
  if (days < 1) throw std::invalid_argument("generate_weather: days must be >= 1");
  Rng rng = Rng::stream(seed, "weather");
  double dt_h = timestep_minutes / 60.0;
  std::size_t n = static_cast<std::size_t>(std::lround(days * 24.0 / dt_h));

  WeatherSeries w;
  w.time_h.resize(n);
  w.t_out.resize(n);
  w.irradiance.resize(n);

  std::vector<double> cloud(static_cast<std::size_t>(days));
  for (auto& c : cloud) c = rng.uniform(p.cloud_min, 1.0);

  double walk = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double h = i * dt_h;
    w.time_h[i] = h;
    walk += p.walk_std * rng.normal();
    if (walk > p.walk_max) walk = 2.0 * p.walk_max - walk;
    if (walk < -p.walk_max) walk = -2.0 * p.walk_max - walk;
    double tod = std::fmod(h, 24.0);
    w.t_out[i] = p.mean_temp +
                 p.diurnal_amp * std::cos(2.0 * std::numbers::pi * (tod - 15.0) / 24.0) +
                 walk;
    double irr = 0.0;
    if (tod > p.sunrise_h && tod < p.sunset_h) {
      double phase = (tod - p.sunrise_h) / (p.sunset_h - p.sunrise_h);
      std::size_t day = std::min<std::size_t>(static_cast<std::size_t>(h / 24.0),
                                              cloud.size() - 1);
      irr = p.irr_peak * cloud[day] * std::sin(std::numbers::pi * phase);
    }
    w.irradiance[i] = irr;
  }
  return w;
}

struct ScheduleParams {
  double min_request_h = 1.0;
  double max_request_h = 4.0;
  double min_gap_h = 4.0;
  double max_gap_h = 15.0;
  double min_magnitude = 0.1;
  double max_magnitude = 0.5;
  bool alternate_signs = false;  // false: independent random signs
};

// Alternating request-free / request segments with uniformly drawn durations
// and magnitudes. Starts with a request-free gap.
inline RequestSchedule generate_training_schedule(std::uint64_t seed,
                                                  std::size_t horizon_steps,
                                                  int steps_per_hour,
                                                  const ScheduleParams& p = {}) {
  Rng rng = Rng::stream(seed, "schedule");
  RequestSchedule sched;
  std::size_t t = 0;
  bool positive = rng.coin();
  while (true) {
    double gap_h = rng.uniform(p.min_gap_h, p.max_gap_h);
    t += static_cast<std::size_t>(std::lround(gap_h * steps_per_hour));
    if (t >= horizon_steps) break;
    double dur_h = rng.uniform(p.min_request_h, p.max_request_h);
    auto dur = static_cast<std::size_t>(std::lround(dur_h * steps_per_hour));
    dur = std::min(dur, horizon_steps - t);
    if (dur == 0) break;
    double mag = rng.uniform(p.min_magnitude, p.max_magnitude);
    bool sign_pos = p.alternate_signs ? positive : rng.coin();
    positive = !positive;
    sched.segments.push_back({t, dur, sign_pos ? mag : -mag});
    t += dur;
  }
  return sched;
}

// Ground-truth flexibility: for each (power level, start time) cell, re-run
// the plant from the baseline state with the requested input applied open
// loop and count the steps until the temperature leaves the comfort band
// (with tolerance eps absorbing discretization error). Noise-free.
inline envelope::FlexibilityEnvelope true_envelope(
    const SimConfig& cfg, const WeatherSeries& weather, const Trace& baseline,
    const std::vector<double>& power_grid,
    const std::vector<std::size_t>& time_grid, int cap_steps,
    double eps = 0.05) {
  cfg.validate();
  weather.validate();
  if (baseline.size() != weather.size())
    throw std::invalid_argument("true_envelope: baseline does not match weather");
  for (std::size_t t : time_grid)
    if (t + static_cast<std::size_t>(cap_steps) > weather.size())
      throw std::out_of_range("true_envelope: grid cell exceeds horizon");

  envelope::FlexibilityEnvelope env;
  env.power_grid = power_grid;
  env.time_grid = time_grid;
  env.cap_steps = cap_steps;
  env.durations.assign(power_grid.size() * time_grid.size(), 0);

  double lo = cfg.temp_min - eps;
  double hi = cfg.temp_max + eps;
  parallel_for(time_grid.size(), [&](std::size_t j) {
    std::size_t start = time_grid[j];
    for (std::size_t i = 0; i < power_grid.size(); ++i) {
      double p = power_grid[i];
      if (p == 0.0) {
        env.at(i, j) = cap_steps;
        continue;
      }
      double t = baseline.t_in[start];
      int k = 0;
      while (k < cap_steps) {
        std::size_t abs = start + static_cast<std::size_t>(k);
        double u = std::clamp(baseline.u_baseline[abs] + p, 0.0, 1.0);
        t = detail::plant_next(t, weather.t_out[abs], weather.irradiance[abs], u, cfg);
        if (t < lo || t > hi) break;
        ++k;
      }
      env.at(i, j) = k;
    }
  });
  return env;
}

}  // namespace flexcast::sim
