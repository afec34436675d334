#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "flexcast/battery.hpp"
#include "flexcast/sim.hpp"

namespace battery = flexcast::battery;
namespace sim = flexcast::sim;

namespace {

struct RandomCase {
  double s0;
  std::vector<double> requests;
  std::vector<double> f;
  battery::BatteryParams params;
};

RandomCase random_case(std::mt19937_64& rng, std::size_t max_len = 200) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  RandomCase c;
  c.s0 = unit(rng);
  c.params.a_plus = 0.02 + 0.2 * unit(rng);
  c.params.a_minus = 0.02 + 0.2 * unit(rng);
  c.params.b_f = unit(rng);
  std::size_t k = len(rng);
  c.requests.resize(k);
  c.f.resize(k + 1);
  for (auto& f : c.f) f = unit(rng);
  // Mix of zero, positive, and negative requests with sign changes.
  for (auto& r : c.requests) {
    double roll = unit(rng);
    r = roll < 0.4 ? 0.0 : sym(rng);
  }
  return c;
}

// Plain step-by-step recursion independent of the closed-form bookkeeping.
double iterate_oracle(const RandomCase& c) {
  double s = c.s0;
  for (std::size_t l = 0; l < c.requests.size(); ++l)
    s = battery::step(s, c.requests[l], c.f[l], c.f[l + 1], c.params);
  return s;
}

// Build a request-free trace whose state column follows the battery recursion
// exactly, for identification round-trip tests.
sim::Trace battery_trace(const std::vector<double>& requests,
                         const std::vector<double>& f, double s0,
                         const battery::BatteryParams& p) {
  sim::Trace tr;
  std::size_t n = requests.size();
  REQUIRE(f.size() >= n + 1);
  double s = s0;
  // One final request-free row carries the post-run state, so the trace has
  // n+1 rows and aligns index-for-index with the n+1 nominal predictions.
  for (std::size_t t = 0; t <= n; ++t) {
    tr.time_h.push_back(t * (5.0 / 60.0));
    tr.t_out.push_back(0.0);
    tr.irradiance.push_back(0.0);
    tr.t_in.push_back(0.0);
    tr.state.push_back(s);
    tr.u.push_back(0.0);
    tr.u_baseline.push_back(0.0);
    tr.request.push_back(t < n ? requests[t] : 0.0);
    tr.delta_under.push_back(0.0);
    tr.delta_over.push_back(0.0);
    if (t < n) s = battery::step(s, requests[t], f[t], f[t + 1], p);
  }
  return tr;
}

}  // namespace

TEST_CASE("zero suffix counts tally trailing zero requests") {
  std::vector<double> r{0.0, 0.0, 0.3, 0.0, -0.2, 0.0, 0.0};
  std::vector<int> q = battery::zero_suffix_counts(r);
  // q[l] = number of zero requests in r[l..end)
  CHECK(q == std::vector<int>{5, 4, 3, 3, 2, 2, 1, 0});
}

TEST_CASE("closed-form propagation matches the step recursion") {
  std::mt19937_64 rng(12345);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    RandomCase c = random_case(rng);
    double closed = battery::propagate(c.s0, c.requests, c.f, c.params);
    double iter = iterate_oracle(c);
    worst = std::max(worst, std::abs(closed - iter));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("propagation handles the all-zero and no-request edge cases") {
  battery::BatteryParams p{0.1, 0.1, 1.0};  // full pull-back to nominal
  std::vector<double> r{0.0, 0.0};
  std::vector<double> f{0.2, 0.5, 0.7};
  // b_f = 1 snaps the state onto the nominal prediction each zero step; the
  // (1-b_f)^q factor must treat 0^0 = 1.
  CHECK(battery::propagate(0.9, r, f, p) == Catch::Approx(0.7).epsilon(1e-12));
  // Empty request list: state unchanged.
  CHECK(battery::propagate(0.9, {}, std::vector<double>{0.2}, p) ==
        Catch::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("state decomposition is affine in the battery gains") {
  std::mt19937_64 rng(777);
  for (int trial = 0; trial < 200; ++trial) {
    RandomCase c = random_case(rng, 50);
    battery::StateDecomposition d =
        battery::decompose(c.s0, c.requests, c.f, c.params.b_f);
    double reconstructed = d.offset + d.coeff_plus * c.params.a_plus +
                           d.coeff_minus * c.params.a_minus;
    double direct = battery::propagate(c.s0, c.requests, c.f, c.params);
    REQUIRE(reconstructed == Catch::Approx(direct).margin(1e-12));
    // The affine identity holds for any other gain values too.
    battery::BatteryParams other{0.31, 0.017, c.params.b_f};
    double recon2 = d.offset + d.coeff_plus * other.a_plus +
                    d.coeff_minus * other.a_minus;
    REQUIRE(recon2 ==
            Catch::Approx(battery::propagate(c.s0, c.requests, c.f, other))
                .margin(1e-12));
  }
}

TEST_CASE("episode extraction splits request runs and recovery windows") {
  //           0    1    2    3     4    5    6    7    8    9
  std::vector<double> req{0.0, 0.3, 0.3, -0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  std::vector<double> f(11, 0.5);
  battery::BatteryParams p{0.1, 0.1, 0.3};
  sim::Trace tr = battery_trace(req, f, 0.5, p);

  auto [requests, recoveries] =
      battery::extract_episodes(tr, f, battery::ExtractionOptions{});
  REQUIRE(requests.size() == 2);
  // First run: steps 1..2 (positive), states 1..3.
  CHECK(requests[0].positive());
  REQUIRE(requests[0].states.size() == 3);
  CHECK(requests[0].requests == std::vector<double>{0.3, 0.3});
  CHECK(requests[0].states[0] == tr.state[1]);
  // Second run: step 3 (negative), states 3..4.
  CHECK_FALSE(requests[1].positive());
  CHECK(requests[1].requests == std::vector<double>{-0.2});

  // Recovery window: request-free span after the last run.
  REQUIRE(recoveries.size() >= 1);
  const auto& rec = recoveries.back();
  REQUIRE(rec.states.size() >= 2);
  CHECK(rec.states[0] == tr.state[4]);
}

TEST_CASE("extraction flags saturated request episodes") {
  std::vector<double> req{0.3, 0.3, 0.3, 0.3, 0.3, 0.3};
  std::vector<double> f(7, 0.5);
  battery::BatteryParams p{0.15, 0.15, 0.3};
  // 0.9 + k*0.045 reaches the 0.98 saturation band at k = 2.
  sim::Trace tr = battery_trace(req, f, 0.9, p);
  auto [requests, recoveries] =
      battery::extract_episodes(tr, f, battery::ExtractionOptions{});
  REQUIRE(requests.size() == 1);
  CHECK(requests[0].saturation_index == 2);
  // An episode that never saturates reports one past the run length.
  sim::Trace calm = battery_trace(req, f, 0.3, p);
  auto [calm_reqs, calm_recs] =
      battery::extract_episodes(calm, f, battery::ExtractionOptions{});
  REQUIRE(calm_reqs.size() == 1);
  CHECK(calm_reqs[0].saturation_index == calm_reqs[0].states.size());
}

TEST_CASE("extraction requires episodes to exist") {
  std::vector<double> req(5, 0.0);
  std::vector<double> f(6, 0.5);
  battery::BatteryParams p{0.1, 0.1, 0.3};
  sim::Trace tr = battery_trace(req, f, 0.5, p);
  // A trace with no requests still yields recovery data, not an error; but
  // identify() must fail because no gain samples can be formed.
  CHECK_THROWS_AS(
      battery::identify(std::span(&tr, 1), std::span(&f, 1), {}),
      std::runtime_error);
}

TEST_CASE("gain samples recover the true parameters from clean battery data") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> apick(0.05, 0.15);
  for (int trial = 0; trial < 20; ++trial) {
    battery::BatteryParams truth{apick(rng), apick(rng), 0.25};
    // Alternating request runs and long recovery gaps on a flat nominal.
    std::vector<double> req;
    std::mt19937_64 inner(trial);
    std::uniform_real_distribution<double> mag(0.1, 0.5);
    bool positive = true;
    for (int blocks = 0; blocks < 8; ++blocks) {
      double m = mag(inner) * (positive ? 1.0 : -1.0);
      positive = !positive;
      for (int i = 0; i < 6; ++i) req.push_back(m);
      for (int i = 0; i < 40; ++i) req.push_back(0.0);
    }
    std::vector<double> f(req.size() + 1, 0.5);
    sim::Trace tr = battery_trace(req, f, 0.5, truth);

    battery::IdentificationResult res =
        battery::identify(std::span(&tr, 1), std::span(&f, 1), {});
    REQUIRE_FALSE(res.spaces.p_plus.empty());
    REQUIRE_FALSE(res.spaces.p_minus.empty());
    for (double a : res.spaces.p_plus)
      REQUIRE(a == Catch::Approx(truth.a_plus).epsilon(0.01));
    for (double a : res.spaces.p_minus)
      REQUIRE(a == Catch::Approx(truth.a_minus).epsilon(0.01));
    REQUIRE(res.b_f == Catch::Approx(truth.b_f).epsilon(0.02));
  }
}

TEST_CASE("sample_a rejects degenerate episodes") {
  battery::RequestEpisode ep;
  ep.states = {0.5, 0.55};
  ep.nominal = {0.5, 0.5};
  ep.requests = {0.3};
  ep.saturation_index = 2;
  // Only two states: l = 2 needs sum of requests over [0, l-2] = r_0 alone.
  battery::SamplingOptions opt;
  auto s = battery::sample_a(ep, opt);
  REQUIRE(s.has_value());
  CHECK(*s == Catch::Approx(0.05 / 0.3).epsilon(1e-12));

  // Vanishing request sum.
  battery::RequestEpisode tiny = ep;
  tiny.requests = {1e-9};
  CHECK_FALSE(battery::sample_a(tiny, opt).has_value());

  // Sample at/below the floor is noise.
  battery::RequestEpisode flat = ep;
  flat.states = {0.5, 0.5 + 0.3 * opt.sample_floor};
  CHECK_FALSE(battery::sample_a(flat, opt).has_value());

  // Saturated from the start: l < 2.
  battery::RequestEpisode sat = ep;
  sat.saturation_index = 1;
  CHECK_FALSE(battery::sample_a(sat, opt).has_value());
}

TEST_CASE("sample_a uses only the pre-saturation prefix") {
  battery::BatteryParams p{0.2, 0.2, 0.0};
  std::vector<double> req(10, 0.45);
  std::vector<double> f(11, 0.1);
  // 0.5 + k*0.09 leaves the saturation band after step 6 (1.04 > 0.98).
  sim::Trace tr = battery_trace(req, f, 0.5, p);
  auto [reqs, recs] =
      battery::extract_episodes(tr, f, battery::ExtractionOptions{});
  REQUIRE(reqs.size() == 1);
  REQUIRE(reqs[0].saturation_index == 6);
  auto s = battery::sample_a(reqs[0], {});
  REQUIRE(s.has_value());
  // The pre-saturation prefix is clean battery data, so the sample is exact.
  CHECK(*s == Catch::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("recovery rate estimation matches a grid-scan oracle") {
  // Analytic branch: dev ratio in (0, 1].
  battery::RecoveryEpisode ep;
  double b_true = 0.18;
  double dev = -0.3;
  for (int i = 0; i < 6; ++i) {
    ep.states.push_back(0.5 + dev);
    ep.nominal.push_back(0.5);
    dev *= (1.0 - b_true);
  }
  ep.exit_index = ep.states.size();
  auto b = battery::sample_b_f(ep, 0.05);
  REQUIRE(b.has_value());
  CHECK(*b == Catch::Approx(b_true).epsilon(1e-9));

  // Oscillating branch (ratio < 0): golden-section against a dense scan.
  battery::RecoveryEpisode osc;
  osc.states = {0.8, 0.55, 0.42};
  osc.nominal = {0.5, 0.5, 0.5};
  osc.exit_index = 3;
  auto bosc = battery::sample_b_f(osc, 0.05);
  if (bosc.has_value()) {
    double dev0 = 0.3;
    double dev_end = osc.states[2] - 0.5;
    int expo = 2;
    double best_b = 0.0, best_err = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 100000; ++i) {
      double cand = i / 100000.0;
      double err = std::abs(dev0 * std::pow(1.0 - cand, expo) - dev_end);
      if (err < best_err) {
        best_err = err;
        best_b = cand;
      }
    }
    CHECK(*bosc == Catch::Approx(best_b).margin(1e-3));
  }

  // Degenerate inputs refuse to produce a sample.
  battery::RecoveryEpisode flat;
  flat.states = {0.5, 0.5, 0.5};
  flat.nominal = {0.5, 0.5, 0.5};
  flat.exit_index = 3;
  CHECK_FALSE(battery::sample_b_f(flat, 0.05).has_value());

  battery::RecoveryEpisode instant;
  instant.states = {0.8, 0.5};
  instant.nominal = {0.5, 0.5};
  instant.exit_index = 1;  // already back inside the band
  CHECK_FALSE(battery::sample_b_f(instant, 0.05).has_value());
}

TEST_CASE("full recovery in one step yields b_f = 1") {
  battery::RecoveryEpisode ep;
  ep.states = {0.9, 0.5, 0.5};
  ep.nominal = {0.5, 0.5, 0.5};
  ep.exit_index = 2;
  auto b = battery::sample_b_f(ep, 0.01);
  REQUIRE(b.has_value());
  CHECK(*b == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("percentile cap drops the noisy upper tail of the sample set") {
  // 100 samples 0.01..1.00: the 99th-percentile nearest-rank cap keeps
  // values <= the 99th ranked value (0.99).
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i / 100.0);
  std::shuffle(v.begin(), v.end(), std::mt19937_64(5));
  std::vector<double> kept = battery::detail::finalize_samples(std::move(v), 0.99);
  REQUIRE(kept.size() == 99);
  CHECK(kept.front() == Catch::Approx(0.01));
  CHECK(kept.back() == Catch::Approx(0.99));
  CHECK(std::is_sorted(kept.begin(), kept.end()));

  // cap = 1 keeps everything.
  std::vector<double> w{3.0, 1.0, 2.0};
  std::vector<double> all = battery::detail::finalize_samples(std::move(w), 1.0);
  CHECK(all == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("identify aggregates recovery candidates by mean or max") {
  battery::BatteryParams truth{0.1, 0.1, 0.3};
  std::vector<double> req;
  for (int blocks = 0; blocks < 6; ++blocks) {
    double m = blocks % 2 == 0 ? 0.4 : -0.4;
    for (int i = 0; i < 5; ++i) req.push_back(m);
    for (int i = 0; i < 30; ++i) req.push_back(0.0);
  }
  std::vector<double> f(req.size() + 1, 0.5);
  sim::Trace tr = battery_trace(req, f, 0.5, truth);

  battery::IdentifyOptions mean_opt;
  mean_opt.b_mode = battery::BfAggregation::kMean;
  battery::IdentificationResult mean_res =
      battery::identify(std::span(&tr, 1), std::span(&f, 1), mean_opt);

  battery::IdentifyOptions max_opt;
  max_opt.b_mode = battery::BfAggregation::kMax;
  battery::IdentificationResult max_res =
      battery::identify(std::span(&tr, 1), std::span(&f, 1), max_opt);

  REQUIRE_FALSE(mean_res.spaces.b_candidates.empty());
  double mean = 0.0, mx = 0.0;
  for (double b : mean_res.spaces.b_candidates) {
    mean += b;
    mx = std::max(mx, b);
  }
  mean /= static_cast<double>(mean_res.spaces.b_candidates.size());
  CHECK(mean_res.b_f == Catch::Approx(mean).epsilon(1e-12));
  CHECK(max_res.b_f == Catch::Approx(mx).epsilon(1e-12));
  CHECK(max_res.b_f >= mean_res.b_f);
}

TEST_CASE("identify demands requests of both signs") {
  battery::BatteryParams p{0.1, 0.1, 0.3};
  std::vector<double> req;
  for (int blocks = 0; blocks < 4; ++blocks) {
    for (int i = 0; i < 5; ++i) req.push_back(0.4);  // positive only
    for (int i = 0; i < 30; ++i) req.push_back(0.0);
  }
  std::vector<double> f(req.size() + 1, 0.5);
  sim::Trace tr = battery_trace(req, f, 0.5, p);
  CHECK_THROWS_AS(battery::identify(std::span(&tr, 1), std::span(&f, 1), {}),
                  std::runtime_error);
}

TEST_CASE("identification works on simulator data end to end") {
  sim::SimConfig cfg;
  cfg.noise_std = 0.0;
  sim::WeatherSeries w = sim::generate_weather(41, 10);
  sim::RequestSchedule sched =
      sim::generate_training_schedule(41, w.size(), cfg.steps_per_hour());
  sim::Trace tr = sim::simulate(cfg, w, sched, 41);
  // Use the simulator's own noise-free nominal state as the prediction.
  sim::Trace twin = sim::simulate(cfg, w, {}, 41);
  std::vector<double> f = twin.state;

  battery::IdentificationResult res =
      battery::identify(std::span(&tr, 1), std::span(&f, 1), {});
  CHECK(res.spaces.p_plus.size() >= 2);
  CHECK(res.spaces.p_minus.size() >= 2);
  CHECK(res.b_f > 0.0);
  CHECK(res.b_f <= 1.0);
  for (double a : res.spaces.p_plus) {
    CHECK(a > 0.0);
    CHECK(a < 1.0);
  }
}
