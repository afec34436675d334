#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flexcast/sim.hpp"

// Virtual battery model of a building: scalar state equation driven by
// relative consumption requests and the weather-driven nominal state, its
// closed-form k-step propagation, and identification of the request-gain
// sample spaces and the recovery rate from controller logs.
namespace flexcast::battery {

struct BatteryParams {
  double a_plus = 0.0;   // state change per unit positive request per step
  double a_minus = 0.0;  // same magnitude convention for negative requests (> 0)
  double b_f = 0.0;      // recovery rate per request-free step, in [0, 1]

  void validate() const {
    if (!(a_plus > 0.0) || !(a_minus > 0.0))
      throw std::invalid_argument("BatteryParams: request gains must be positive");
    if (b_f < 0.0 || b_f > 1.0)
      throw std::invalid_argument("BatteryParams: b_f must be in [0, 1]");
  }
};

// Identified sample spaces, sorted ascending. The product space of
// (a+, a-) pairs has N = n1 * n2 outcomes.
struct SampleSpaces {
  std::vector<double> p_plus;
  std::vector<double> p_minus;
  std::vector<double> b_candidates;

  std::size_t n_total() const { return p_plus.size() * p_minus.size(); }

  void validate() const {
    if (p_plus.empty() || p_minus.empty())
      throw std::invalid_argument("SampleSpaces: empty sample space");
    if (!std::is_sorted(p_plus.begin(), p_plus.end()) ||
        !std::is_sorted(p_minus.begin(), p_minus.end()))
      throw std::invalid_argument("SampleSpaces: sample spaces must be sorted");
  }
};

// One request segment: states s_0..s_k, requests r_0..r_{k-1} of constant
// sign, and the nominal predictions f(e_0)..f(e_k) over the same steps.
// saturation_index is the first index where the measured state pins to a
// band edge, or k+1 if it never does.
struct RequestEpisode {
  std::vector<double> states;
  std::vector<double> requests;
  std::vector<double> nominal;
  std::size_t saturation_index = 0;

  bool positive() const { return !requests.empty() && requests.front() > 0.0; }
};

// Request-free window right after a request segment. exit_index is the first
// index where the state re-enters the delta-band around the nominal
// prediction, or k+1 if it stays outside for the whole window.
struct RecoveryEpisode {
  std::vector<double> states;
  std::vector<double> nominal;
  std::size_t exit_index = 0;
};

// One step of the battery state equation. r > 0 uses a_plus, r < 0 uses
// a_minus, and only request-free steps pull the state toward the nominal
// prediction. The output is deliberately unbounded: values outside [0, 1]
// encode that the building cannot fulfill the request.
inline double step(double s, double r, double f_now, double f_next,
                   const BatteryParams& p) {
  double r_pos = std::max(r, 0.0);
  double r_neg = std::min(r, 0.0);
  double recovery = (r == 0.0) ? p.b_f * (f_now - s) : 0.0;
  // The nominal drift enters as a single difference, exactly as in the
  // closed-form propagation; appending +f_next-f_now term by term rounds
  // differently and can push a flat-nominal path across a state bound.
  return s + p.a_plus * r_pos + p.a_minus * r_neg + recovery + (f_next - f_now);
}

// q[l] = number of request-free steps in positions l..k-1 (so q[k] = 0).
inline std::vector<int> zero_suffix_counts(std::span<const double> requests) {
  std::vector<int> q(requests.size() + 1, 0);
  for (std::size_t l = requests.size(); l-- > 0;)
    q[l] = q[l + 1] + (requests[l] == 0.0 ? 1 : 0);
  return q;
}

namespace detail {

// (1-b)^c for c = 0..max_count, with the 0^0 = 1 convention.
inline std::vector<double> decay_powers(double b_f, int max_count) {
  std::vector<double> pw(static_cast<std::size_t>(max_count) + 1);
  pw[0] = 1.0;
  for (int c = 1; c <= max_count; ++c) pw[c] = pw[c - 1] * (1.0 - b_f);
  return pw;
}

}  // namespace detail

// Closed-form k-step propagation:
//   s_k = (1-b)^{q_0} s_0
//       + sum_l (1-b)^{q_{l+1}} (f_l b chi_{r_l} + a+ r_l+ + a- r_l- + f_{l+1} - f_l)
// where q_l counts the request-free steps after position l. Matches k
// applications of step() up to floating-point accumulation.
inline double propagate(double s0, std::span<const double> requests,
                        std::span<const double> f_values, const BatteryParams& p) {
  if (f_values.size() != requests.size() + 1)
    throw std::invalid_argument("propagate: need one more f value than requests");
  std::vector<int> q = zero_suffix_counts(requests);
  std::vector<double> pw = detail::decay_powers(p.b_f, q[0]);
  double s = pw[q[0]] * s0;
  for (std::size_t l = 0; l < requests.size(); ++l) {
    double r = requests[l];
    double term = f_values[l + 1] - f_values[l];
    if (r == 0.0)
      term += f_values[l] * p.b_f;
    else
      term += p.a_plus * std::max(r, 0.0) + p.a_minus * std::min(r, 0.0);
    s += pw[q[l + 1]] * term;
  }
  return s;
}

// Affine view of the propagated state in the request gains:
//   s_k = offset + coeff_plus * a+ + coeff_minus * a-.
// weighted_pos/neg hold the per-step decay-weighted request parts whose sums
// give the coefficients.
struct StateDecomposition {
  double offset = 0.0;               // c_k, the non-request part
  std::vector<double> weighted_pos;  // (1-b)^{q_{l+1}} r_l+
  std::vector<double> weighted_neg;  // (1-b)^{q_{l+1}} r_l-
  double coeff_plus = 0.0;
  double coeff_minus = 0.0;
};

inline StateDecomposition decompose(double s0, std::span<const double> requests,
                                    std::span<const double> f_values, double b_f) {
  if (f_values.size() != requests.size() + 1)
    throw std::invalid_argument("decompose: need one more f value than requests");
  std::vector<int> q = zero_suffix_counts(requests);
  std::vector<double> pw = detail::decay_powers(b_f, q[0]);
  StateDecomposition d;
  d.weighted_pos.resize(requests.size());
  d.weighted_neg.resize(requests.size());
  d.offset = pw[q[0]] * s0;
  for (std::size_t l = 0; l < requests.size(); ++l) {
    double r = requests[l];
    double w = pw[q[l + 1]];
    d.offset += w * (f_values[l + 1] - f_values[l]);
    if (r == 0.0) d.offset += w * f_values[l] * b_f;
    d.weighted_pos[l] = w * std::max(r, 0.0);
    d.weighted_neg[l] = w * std::min(r, 0.0);
    d.coeff_plus += d.weighted_pos[l];
    d.coeff_minus += d.weighted_neg[l];
  }
  return d;
}

struct ExtractionOptions {
  double delta = 0.05;           // recovery exit threshold, state units
  double saturation_low = 0.02;  // measured states rarely hit 0/1 exactly
  double saturation_high = 0.98;
};

// Splits a trace into request episodes (runs of same-sign nonzero requests)
// and the request-free recovery windows that follow them. nominal_series
// must align index-for-index with the trace.
inline std::pair<std::vector<RequestEpisode>, std::vector<RecoveryEpisode>>
extract_episodes(const sim::Trace& trace, const std::vector<double>& nominal_series,
                 const ExtractionOptions& opt = {}) {
  std::size_t n = trace.size();
  if (nominal_series.size() != n)
    throw std::invalid_argument("extract_episodes: nominal series length mismatch");

  std::vector<RequestEpisode> requests;
  std::vector<RecoveryEpisode> recoveries;

  auto sign = [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); };
  std::size_t t = 0;
  while (t < n) {
    if (trace.request[t] == 0.0) {
      ++t;
      continue;
    }
    int sg = sign(trace.request[t]);
    std::size_t end = t;
    while (end < n && sign(trace.request[end]) == sg) ++end;

    RequestEpisode ep;
    std::size_t last_state = std::min(end, n - 1);  // state one step past the run
    for (std::size_t i = t; i <= last_state; ++i) {
      ep.states.push_back(trace.state[i]);
      ep.nominal.push_back(nominal_series[i]);
    }
    for (std::size_t i = 0; i + 1 < ep.states.size(); ++i)
      ep.requests.push_back(trace.request[t + i]);
    ep.saturation_index = ep.states.size();  // k+1
    for (std::size_t i = 0; i < ep.states.size(); ++i) {
      if (ep.states[i] <= opt.saturation_low || ep.states[i] >= opt.saturation_high) {
        ep.saturation_index = i;
        break;
      }
    }
    if (!ep.requests.empty()) requests.push_back(std::move(ep));

    // Recovery window: request-free steps following the run.
    if (end < n && trace.request[end] == 0.0) {
      std::size_t rec_end = end;
      while (rec_end < n && trace.request[rec_end] == 0.0) ++rec_end;
      std::size_t last = std::min(rec_end, n - 1);
      RecoveryEpisode rec;
      for (std::size_t i = end; i <= last; ++i) {
        rec.states.push_back(trace.state[i]);
        rec.nominal.push_back(nominal_series[i]);
      }
      rec.exit_index = rec.states.size();  // k+1
      for (std::size_t i = 0; i < rec.states.size(); ++i) {
        if (std::abs(rec.states[i] - rec.nominal[i]) <= opt.delta) {
          rec.exit_index = i;
          break;
        }
      }
      recoveries.push_back(std::move(rec));
    }
    t = end;
  }
  if (requests.empty() && recoveries.empty())
    throw std::runtime_error("extract_episodes: no episodes found (no requests in trace)");
  return {std::move(requests), std::move(recoveries)};
}

struct SamplingOptions {
  double min_request_sum = 1e-6;  // reject episodes with vanishing total request
  double sample_floor = 1e-4;     // below this the sample is noise, not physics
};

// Request-gain sample from one episode:
//   a = ((s_{l-1} - f_{l-1}) - (s_0 - f_0)) / sum_{i=0}^{l-2} r_i
// where l is the saturation index (or k+1 when the request never saturates),
// so only the pre-saturation part of the run is used.
inline std::optional<double> sample_a(const RequestEpisode& ep,
                                      const SamplingOptions& opt = {}) {
  std::size_t l = ep.saturation_index;  // in 0..k+1
  if (l < 2) return std::nullopt;
  double sum_r = 0.0;
  for (std::size_t i = 0; i + 2 <= l; ++i) sum_r += ep.requests[i];
  if (std::abs(sum_r) < opt.min_request_sum) return std::nullopt;
  double dev_end = ep.states[l - 1] - ep.nominal[l - 1];
  double dev_start = ep.states[0] - ep.nominal[0];
  double a = (dev_end - dev_start) / sum_r;
  if (a <= opt.sample_floor) return std::nullopt;
  return a;
}

namespace detail {

// Golden-section minimization of the squared recovery residual over [0, 1].
inline double golden_section_b(double dev0, double dev_end, int exponent) {
  auto obj = [&](double b) {
    double v = std::pow(1.0 - b, exponent) * dev0 - dev_end;
    return v * v;
  };
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.0, hi = 1.0;
  double x1 = hi - gr * (hi - lo);
  double x2 = lo + gr * (hi - lo);
  double f1 = obj(x1), f2 = obj(x2);
  for (int it = 0; it < 80; ++it) {
    if (f1 < f2) {
      hi = x2; x2 = x1; f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = obj(x1);
    } else {
      lo = x1; x1 = x2; f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = obj(x2);
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Recovery-rate sample: least-squares fit of (1-b)^{l-1} to the observed
// shrinkage of the nominal deviation over the window. The shrink ratio in
// (0, 1] has the exact minimizer b = 1 - ratio^{1/(l-1)}; overshoot past the
// nominal (ratio <= 0) falls back to a line search.
inline std::optional<double> sample_b_f(const RecoveryEpisode& ep, double delta) {
  std::size_t l = ep.exit_index;
  if (l < 2) return std::nullopt;
  double dev0 = ep.states[0] - ep.nominal[0];
  if (std::abs(dev0) <= delta) return std::nullopt;
  double dev_end = ep.states[l - 1] - ep.nominal[l - 1];
  double rho = dev_end / dev0;
  int expo = static_cast<int>(l) - 1;
  if (rho > 0.0 && rho <= 1.0)
    return 1.0 - std::pow(rho, 1.0 / static_cast<double>(expo));
  if (rho == 0.0) return 1.0;
  return detail::golden_section_b(dev0, dev_end, expo);
}

enum class BfAggregation { kMean, kMax };

struct IdentifyOptions {
  ExtractionOptions extraction;
  SamplingOptions sampling;
  double percentile_cap = 0.99;  // drop samples above this quantile (noise tail)
  BfAggregation b_mode = BfAggregation::kMean;
};

namespace detail {

// Nearest-rank percentile cap, then ascending sort.
inline std::vector<double> finalize_samples(std::vector<double> v, double pct) {
  if (v.empty()) return v;
  std::sort(v.begin(), v.end());
  auto rank = static_cast<std::size_t>(
      std::ceil(pct * static_cast<double>(v.size())));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  double cap = v[rank - 1];
  std::vector<double> out;
  for (double x : v)
    if (x <= cap) out.push_back(x);
  return out;
}

}  // namespace detail

struct IdentificationResult {
  SampleSpaces spaces;
  double b_f = 0.0;
  std::size_t episodes_plus = 0;
  std::size_t episodes_minus = 0;
};

// Two-step identification over one or more traces: gather request-gain
// samples per sign, gather recovery-rate candidates, fix b_f by the chosen
// aggregation.
inline IdentificationResult identify(
    std::span<const sim::Trace> traces,
    std::span<const std::vector<double>> nominal_series,
    const IdentifyOptions& opt = {}) {
  if (traces.size() != nominal_series.size())
    throw std::invalid_argument("identify: traces / nominal series count mismatch");
  std::vector<double> plus, minus, bs;
  IdentificationResult res;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    auto [reqs, recs] = extract_episodes(traces[i], nominal_series[i], opt.extraction);
    for (const auto& ep : reqs) {
      ep.positive() ? ++res.episodes_plus : ++res.episodes_minus;
      if (auto a = sample_a(ep, opt.sampling))
        (ep.positive() ? plus : minus).push_back(*a);
    }
    for (const auto& rec : recs)
      if (auto b = sample_b_f(rec, opt.extraction.delta)) bs.push_back(*b);
  }
  res.spaces.p_plus = detail::finalize_samples(std::move(plus), opt.percentile_cap);
  res.spaces.p_minus = detail::finalize_samples(std::move(minus), opt.percentile_cap);
  if (res.spaces.p_plus.empty() || res.spaces.p_minus.empty())
    throw std::runtime_error(
        "identify: no usable samples for at least one request sign; "
        "the request data must contain both positive and negative requests");
  res.spaces.b_candidates = bs;
  if (bs.empty()) {
    res.b_f = 0.0;  // recovery never observed; the gains are unaffected
  } else if (opt.b_mode == BfAggregation::kMean) {
    double acc = 0.0;
    for (double b : bs) acc += b;
    res.b_f = acc / static_cast<double>(bs.size());
  } else {
    res.b_f = *std::max_element(bs.begin(), bs.end());
  }
  return res;
}

}  // namespace flexcast::battery
