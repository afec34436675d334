#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "flexcast/battery.hpp"
#include "flexcast/envelope_types.hpp"
#include "flexcast/parallel.hpp"
#include "flexcast/risk.hpp"

// Feasibility tests for request trajectories under parameter uncertainty and
// the flexibility envelopes built from them.
namespace flexcast::envelope {

// kCeiling tests the state path only at the risk-tempered ceiling gains; kStrict
// additionally guards the opposite state bound (floor gains for constant
// requests, full support-function check for general trajectories).
enum class FeasibilityMode { kCeiling, kStrict };

namespace detail {

// Path of the battery state under a constant request p with gain a, checked
// against [0, 1] at every step. Uses battery::step so that the constant-sign
// special case and the general trajectory checker share bit-identical
// arithmetic.
inline bool constant_path_in_range(double p, int k, double s0,
                                   std::span<const double> f_values, double a) {
  battery::BatteryParams bp;
  bp.a_plus = a;
  bp.a_minus = a;
  bp.b_f = 0.0;  // never used: every step carries a nonzero request
  double s = s0;
  if (s < 0.0 || s > 1.0) return false;
  for (int l = 0; l < k; ++l) {
    s = battery::step(s, p, f_values[static_cast<std::size_t>(l)],
                      f_values[static_cast<std::size_t>(l) + 1], bp);
    if (s < 0.0 || s > 1.0) return false;
  }
  return true;
}

}  // namespace detail

// Can the building sustain the constant relative request p for k steps
// starting from state s0, given the nominal predictions f_values[0..k]?
// The request direction selects the relevant ceiling gain; strict mode also
// re-propagates with the floor gain so drift toward the opposite bound is
// covered.
inline bool feasible_constant(double p, int k, double s0,
                              std::span<const double> f_values,
                              const risk::WorstCaseParams& params_worst, double b_f,
                              FeasibilityMode mode = FeasibilityMode::kCeiling) {
  (void)b_f;  // constant nonzero requests never trigger recovery
  if (p == 0.0)
    throw std::invalid_argument("feasible_constant: p must be nonzero");
  if (f_values.size() < static_cast<std::size_t>(k) + 1)
    throw std::invalid_argument("feasible_constant: need k+1 nominal values");
  double a_hi = p > 0.0 ? params_worst.a_plus_tilde : params_worst.a_minus_tilde;
  if (!detail::constant_path_in_range(p, k, s0, f_values, a_hi)) return false;
  if (mode == FeasibilityMode::kStrict) {
    double a_lo = p > 0.0 ? params_worst.a_plus_floor : params_worst.a_minus_floor;
    if (!detail::constant_path_in_range(p, k, s0, f_values, a_lo)) return false;
  }
  return true;
}

// Feasibility of an arbitrary request trajectory r[0..k-1]. Ceiling mode
// propagates the state once at the ceiling gains and checks [0, 1]; strict
// mode runs the affine decomposition incrementally and checks every prefix
// robustly against the whole uncertainty set.
inline bool feasible_trajectory(std::span<const double> r, double s0,
                                std::span<const double> f_values,
                                const battery::SampleSpaces& spaces,
                                const risk::UncertaintyLevel& level, double b_f,
                                FeasibilityMode mode = FeasibilityMode::kCeiling) {
  if (f_values.size() != r.size() + 1)
    throw std::invalid_argument("feasible_trajectory: need one more f value than requests");
  if (mode == FeasibilityMode::kCeiling) {
    risk::WorstCaseParams w = risk::worst_case_params(spaces, level);
    battery::BatteryParams bp;
    bp.a_plus = w.a_plus_tilde;
    bp.a_minus = w.a_minus_tilde;
    bp.b_f = b_f;
    double s = s0;
    if (s < 0.0 || s > 1.0) return false;
    for (std::size_t l = 0; l < r.size(); ++l) {
      s = battery::step(s, r[l], f_values[l], f_values[l + 1], bp);
      if (s < 0.0 || s > 1.0) return false;
    }
    return true;
  }

  // Strict: maintain (c_l, P_l, M_l) of s_l = c_l + P_l a+ + M_l a- and test
  // -c_l <= P_l a+ + M_l a- <= 1 - c_l over the uncertainty set per prefix.
  double c = s0, cp = 0.0, cm = 0.0;
  auto check = [&]() {
    risk::RobustConstraint rc{cp, cm, -c, 1.0 - c};
    return risk::robust_feasible(rc, spaces, level);
  };
  if (!check()) return false;
  for (std::size_t l = 0; l < r.size(); ++l) {
    double decay = r[l] == 0.0 ? 1.0 - b_f : 1.0;
    double pull = r[l] == 0.0 ? b_f * f_values[l] : 0.0;
    c = decay * c + pull + (f_values[l + 1] - f_values[l]);
    cp = decay * cp + std::max(r[l], 0.0);
    cm = decay * cm + std::min(r[l], 0.0);
    if (!check()) return false;
  }
  return true;
}

// Largest duration k <= cap_steps for which the constant request stays
// feasible, by incremental extension. Constant-request feasibility is
// prefix-closed (a violated prefix stays violated), so the first failing
// step ends the scan.
inline int max_feasible_duration(double p, double s0,
                                 std::span<const double> f_values,
                                 const risk::WorstCaseParams& params_worst,
                                 int cap_steps,
                                 FeasibilityMode mode = FeasibilityMode::kCeiling) {
  if (p == 0.0) return cap_steps;
  if (f_values.size() < static_cast<std::size_t>(cap_steps) + 1)
    throw std::invalid_argument("max_feasible_duration: forecast too short");
  battery::BatteryParams hi, lo;
  hi.a_plus = params_worst.a_plus_tilde;
  hi.a_minus = params_worst.a_minus_tilde;
  lo.a_plus = params_worst.a_plus_floor;
  lo.a_minus = params_worst.a_minus_floor;
  double s_hi = s0, s_lo = s0;
  auto in_range = [](double s) { return s >= 0.0 && s <= 1.0; };
  if (!in_range(s_hi)) return 0;
  for (int k = 1; k <= cap_steps; ++k) {
    std::size_t l = static_cast<std::size_t>(k) - 1;
    s_hi = battery::step(s_hi, p, f_values[l], f_values[l + 1], hi);
    if (!in_range(s_hi)) return k - 1;
    if (mode == FeasibilityMode::kStrict) {
      s_lo = battery::step(s_lo, p, f_values[l], f_values[l + 1], lo);
      if (!in_range(s_lo)) return k - 1;
    }
  }
  return cap_steps;
}

struct PredictOptions {
  FeasibilityMode mode = FeasibilityMode::kCeiling;
  // Seed the first envelope column from a measured state instead of the
  // nominal prediction.
  std::optional<double> measured_s0_first;
};

// Flexibility envelope over a power x start-time grid. The starting state of
// each column is the nominal prediction at the start step, clamped to [0, 1].
// f_series must cover every start step plus cap_steps lookahead. Cells are
// independent and evaluated in parallel.
inline FlexibilityEnvelope predict_envelope(const std::vector<double>& f_series,
                                            const battery::SampleSpaces& spaces,
                                            double b_f,
                                            const risk::UncertaintyLevel& level,
                                            std::vector<double> power_grid,
                                            std::vector<std::size_t> time_grid,
                                            int cap_steps,
                                            const PredictOptions& opt = {}) {
  (void)b_f;  // envelope cells are constant-request paths; no recovery steps
  if (power_grid.empty() || time_grid.empty())
    throw std::invalid_argument("predict_envelope: empty grid");
  for (std::size_t t : time_grid)
    if (t + static_cast<std::size_t>(cap_steps) + 1 > f_series.size())
      throw std::invalid_argument("predict_envelope: forecast too short for time grid");
  risk::WorstCaseParams w = risk::worst_case_params(spaces, level);

  FlexibilityEnvelope env;
  env.power_grid = std::move(power_grid);
  env.time_grid = std::move(time_grid);
  env.cap_steps = cap_steps;
  env.alpha = level.alpha();
  env.durations.assign(env.power_grid.size() * env.time_grid.size(), 0);

  std::size_t n_t = env.time_grid.size();
  parallel_for(env.durations.size(), [&](std::size_t cell) {
    std::size_t i = cell / n_t, j = cell % n_t;
    double p = env.power_grid[i];
    std::size_t t0 = env.time_grid[j];
    double s0 = std::clamp(f_series[t0], 0.0, 1.0);
    if (j == 0 && opt.measured_s0_first) s0 = *opt.measured_s0_first;
    std::span<const double> window(f_series.data() + t0,
                                   static_cast<std::size_t>(cap_steps) + 1);
    env.durations[cell] =
        max_feasible_duration(p, s0, window, w, cap_steps, opt.mode);
  });
  env.check_consistent();
  return env;
}

struct EnvelopeMetrics {
  double infeasible_fraction = 0.0;  // cells predicted longer than truth
  double mean_abs_error = 0.0;       // steps
  std::vector<std::size_t> days;     // distinct day indices of the time grid
  std::vector<double> infeasible_per_day;
  std::vector<double> mae_per_day;
};

// Compares a predicted envelope against ground truth on identical grids.
// A cell is infeasible when the prediction promises more steps than the
// building can deliver.
inline EnvelopeMetrics evaluate(const FlexibilityEnvelope& predicted,
                                const FlexibilityEnvelope& truth,
                                std::size_t steps_per_day = 288) {
  if (!same_grids(predicted, truth))
    throw std::invalid_argument("evaluate: envelope grids differ");
  EnvelopeMetrics m;
  std::vector<std::size_t> day_of_col(predicted.time_grid.size());
  for (std::size_t j = 0; j < predicted.time_grid.size(); ++j) {
    day_of_col[j] = predicted.time_grid[j] / steps_per_day;
    if (std::find(m.days.begin(), m.days.end(), day_of_col[j]) == m.days.end())
      m.days.push_back(day_of_col[j]);
  }
  std::sort(m.days.begin(), m.days.end());
  m.infeasible_per_day.assign(m.days.size(), 0.0);
  m.mae_per_day.assign(m.days.size(), 0.0);
  std::vector<std::size_t> day_cells(m.days.size(), 0);

  std::size_t n_t = predicted.time_grid.size();
  for (std::size_t cell = 0; cell < predicted.durations.size(); ++cell) {
    std::size_t j = cell % n_t;
    std::size_t d = static_cast<std::size_t>(
        std::find(m.days.begin(), m.days.end(), day_of_col[j]) - m.days.begin());
    double err = std::abs(static_cast<double>(predicted.durations[cell]) -
                          static_cast<double>(truth.durations[cell]));
    bool infeasible = predicted.durations[cell] > truth.durations[cell];
    m.mean_abs_error += err;
    m.infeasible_fraction += infeasible ? 1.0 : 0.0;
    m.mae_per_day[d] += err;
    m.infeasible_per_day[d] += infeasible ? 1.0 : 0.0;
    ++day_cells[d];
  }
  auto total = static_cast<double>(predicted.durations.size());
  m.mean_abs_error /= total;
  m.infeasible_fraction /= total;
  for (std::size_t d = 0; d < m.days.size(); ++d) {
    m.mae_per_day[d] /= static_cast<double>(day_cells[d]);
    m.infeasible_per_day[d] /= static_cast<double>(day_cells[d]);
  }
  return m;
}

}  // namespace flexcast::envelope
