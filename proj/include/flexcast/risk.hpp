#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flexcast/battery.hpp"

// CVaR risk measure over the identified sample spaces, the j-point-average
// uncertainty sets it generates, and support-function machinery for robust
// feasibility checks.
namespace flexcast::risk {

// Risk level alpha = j / N over a finite outcome space of N equally likely
// points. Smaller alpha averages fewer extreme outcomes and is more
// conservative.
struct UncertaintyLevel {
  std::size_t j = 1;
  std::size_t n_total = 1;

  double alpha() const {
    return static_cast<double>(j) / static_cast<double>(n_total);
  }

  void validate() const {
    if (j < 1 || j > n_total)
      throw std::invalid_argument("UncertaintyLevel: need 1 <= j <= N");
  }

  static UncertaintyLevel from_j(std::size_t j, std::size_t n_total) {
    UncertaintyLevel lv{j, n_total};
    lv.validate();
    return lv;
  }

  // alpha must be representable as j/N for integer j; otherwise the j-point
  // average construction is undefined and we refuse, naming the two nearest
  // representable levels.
  static UncertaintyLevel from_alpha(double alpha, std::size_t n_total) {
    if (n_total < 1) throw std::invalid_argument("UncertaintyLevel: N must be >= 1");
    if (!(alpha > 0.0) || alpha > 1.0)
      throw std::invalid_argument("UncertaintyLevel: alpha must be in (0, 1]");
    double jf = alpha * static_cast<double>(n_total);
    double jr = std::round(jf);
    if (std::abs(jf - jr) > 1e-9 * static_cast<double>(n_total) || jr < 1.0) {
      auto lo = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(jf)));
      auto hi = std::min<std::size_t>(n_total, static_cast<std::size_t>(std::ceil(jf)));
      throw std::invalid_argument(
          "UncertaintyLevel: alpha=" + std::to_string(alpha) +
          " is not j/N for N=" + std::to_string(n_total) +
          "; nearest valid levels are " + std::to_string(lo) + "/" +
          std::to_string(n_total) + " and " + std::to_string(hi) + "/" +
          std::to_string(n_total));
    }
    return from_j(static_cast<std::size_t>(jr), n_total);
  }
};

// CVaR of a finite outcome vector at level alpha: the worst reweighting of
// the outcome probabilities with per-outcome mass capped at p_i / alpha,
//   cvar_alpha(X) = max_{q} sum_i -q_i X_i.
// Greedy by increasing X is exact. No leading 1/N factor, so alpha = 1
// gives the negated mean and alpha = 1/N the negated minimum.
inline double cvar(std::span<const double> samples,
                   std::span<const double> probabilities, double alpha) {
  if (samples.empty()) throw std::invalid_argument("cvar: empty sample vector");
  if (probabilities.size() != samples.size())
    throw std::invalid_argument("cvar: probability vector size mismatch");
  if (!(alpha > 0.0) || alpha > 1.0)
    throw std::invalid_argument("cvar: alpha must be in (0, 1]");
  double total = 0.0;
  for (double p : probabilities) {
    if (p < 0.0) throw std::invalid_argument("cvar: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("cvar: probabilities must sum to 1");

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return samples[a] < samples[b]; });
  double mass = 0.0, acc = 0.0;
  for (std::size_t i : order) {
    double take = std::min(probabilities[i] / alpha, 1.0 - mass);
    acc += take * samples[i];
    mass += take;
    if (mass >= 1.0 - 1e-15) break;
  }
  return -acc;
}

inline double cvar(std::span<const double> samples, double alpha) {
  std::vector<double> uniform(samples.size(),
                              1.0 / static_cast<double>(samples.size()));
  return cvar(samples, uniform, alpha);
}

// Risk-tempered extremes of the request gains over the uncertainty set:
// tilde values bound the gains from above, floors from below. At j = N all
// four collapse to the (multiplicity-weighted) means of the sample spaces.
struct WorstCaseParams {
  double a_plus_tilde = 0.0;
  double a_minus_tilde = 0.0;
  double a_plus_floor = 0.0;
  double a_minus_floor = 0.0;
};

namespace detail {

// Marginal of one coordinate over the N product pairs: each value repeated
// `multiplicity` times.
inline std::vector<double> expand(const std::vector<double>& values,
                                  std::size_t multiplicity) {
  std::vector<double> out;
  out.reserve(values.size() * multiplicity);
  for (double v : values)
    for (std::size_t m = 0; m < multiplicity; ++m) out.push_back(v);
  return out;
}

inline double mean_of_largest(std::vector<double> v, std::size_t j) {
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(j), v.end(),
                    std::greater<>());
  double acc = std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(j), 0.0);
  return acc / static_cast<double>(j);
}

inline double mean_of_smallest(std::vector<double> v, std::size_t j) {
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(j), v.end());
  double acc = std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(j), 0.0);
  return acc / static_cast<double>(j);
}

}  // namespace detail

// Extremes of the per-coordinate j-point averages over P+ x P-. In the
// product space each a+ value occurs n2 times (each a- value n1 times), so
// the max j-point average of the a+ coordinate is the mean of the j largest
// entries of that multiplicity-expanded list; floors use the j smallest.
inline WorstCaseParams worst_case_params(const battery::SampleSpaces& spaces,
                                         const UncertaintyLevel& level) {
  spaces.validate();
  level.validate();
  if (level.n_total != spaces.n_total())
    throw std::invalid_argument("worst_case_params: level N != n1*n2");
  std::vector<double> plus = detail::expand(spaces.p_plus, spaces.p_minus.size());
  std::vector<double> minus = detail::expand(spaces.p_minus, spaces.p_plus.size());
  WorstCaseParams w;
  w.a_plus_tilde = detail::mean_of_largest(plus, level.j);
  w.a_plus_floor = detail::mean_of_smallest(plus, level.j);
  w.a_minus_tilde = detail::mean_of_largest(minus, level.j);
  w.a_minus_floor = detail::mean_of_smallest(minus, level.j);
  return w;
}

// Support function of the uncertainty set (convex hull of all j-point
// averages of the (a+, a-) product pairs) in direction d: the maximum of a
// linear functional over a convex hull sits at a generator, so it is the
// mean of the j largest values of d . pair over the N pairs.
inline double support_function(const battery::SampleSpaces& spaces,
                               const UncertaintyLevel& level, double d_plus,
                               double d_minus) {
  spaces.validate();
  level.validate();
  if (level.n_total != spaces.n_total())
    throw std::invalid_argument("support_function: level N != n1*n2");
  std::vector<double> scores;
  scores.reserve(level.n_total);
  for (double ap : spaces.p_plus)
    for (double am : spaces.p_minus) scores.push_back(d_plus * ap + d_minus * am);
  return detail::mean_of_largest(std::move(scores), level.j);
}

// One two-sided linear constraint on the gain pair: feasible when
// lower <= coeff_plus * a+ + coeff_minus * a- <= upper for every point of
// the uncertainty set. For a trajectory step with affine offset c_l the
// bounds are lower = -c_l and upper = 1 - c_l (the state must stay in
// [0, 1]).
struct RobustConstraint {
  double coeff_plus = 0.0;
  double coeff_minus = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

inline bool robust_feasible(const RobustConstraint& c,
                            const battery::SampleSpaces& spaces,
                            const UncertaintyLevel& level) {
  double hi = support_function(spaces, level, c.coeff_plus, c.coeff_minus);
  double lo = -support_function(spaces, level, -c.coeff_plus, -c.coeff_minus);
  return lo >= c.lower && hi <= c.upper;
}

}  // namespace flexcast::risk
