// Acceptance gate: one pass/fail line per criterion, exit code = number of
// failures. Each criterion re-derives its expected answers independently
// (step iteration, subset enumeration, bisection) rather than reusing the
// library's own shortcut implementations.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flexcast/battery.hpp"
#include "flexcast/envelope.hpp"
#include "flexcast/io.hpp"
#include "flexcast/nominal.hpp"
#include "flexcast/pipeline.hpp"
#include "flexcast/risk.hpp"
#include "flexcast/sim.hpp"

namespace fs = std::filesystem;
using namespace flexcast;
using Clock = std::chrono::steady_clock;

namespace {

// Collects the first failed expectation; extra notes surface in the pass
// line too.
struct Criterion {
  bool ok = true;
  std::string detail;
  std::string note;

  void expect(bool cond, const std::string& msg) {
    if (!cond && ok) {
      ok = false;
      detail = msg;
    }
  }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) { return io::format_double(v); }

// ---------------------------------------------------------------------------
// Criterion 1: closed-form propagation equals iterated stepping.

void criterion_lemma1(Criterion& c) {
  std::mt19937_64 rng(20260823);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto start = Clock::now();
  double max_dev = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    int k = 1 + static_cast<int>(rng() % 200);
    battery::BatteryParams p;
    p.a_plus = 0.01 + 0.5 * unit(rng);
    p.a_minus = 0.01 + 0.5 * unit(rng);
    p.b_f = unit(rng);
    std::vector<double> r(static_cast<std::size_t>(k));
    for (auto& v : r) {
      double u = unit(rng);
      v = u < 0.4 ? 0.0 : 2.0 * unit(rng) - 1.0;  // mixed zeros and signs
    }
    std::vector<double> f(static_cast<std::size_t>(k) + 1);
    for (auto& v : f) v = unit(rng);
    double s0 = -0.5 + 2.0 * unit(rng);

    double s = s0;
    for (int l = 0; l < k; ++l)
      s = battery::step(s, r[static_cast<std::size_t>(l)],
                        f[static_cast<std::size_t>(l)],
                        f[static_cast<std::size_t>(l) + 1], p);
    double closed = battery::propagate(s0, r, f, p);
    max_dev = std::max(max_dev, std::abs(closed - s));
  }
  double secs = seconds_since(start);
  c.expect(max_dev <= 1e-9, "max deviation " + fmt(max_dev) + " > 1e-9");
  c.expect(secs < 1.0, "took " + fmt(secs) + " s >= 1 s");
  c.note = "max dev " + fmt(max_dev);
}

// ---------------------------------------------------------------------------
// Criterion 2: canonical worst-case construction vs brute force over all
// j-subsets of the product space.

// Enumerates index combinations of size j from 0..n-1 with running
// coordinate sums, tracking the extreme subsets.
struct SubsetExtremes {
  double best_sum_plus = -1e300, worst_sum_plus = 1e300;
  double best_sum_minus = -1e300, worst_sum_minus = 1e300;
  std::vector<std::size_t> arg_max_plus, arg_min_plus, arg_max_minus, arg_min_minus;
};

void enumerate_subsets(const std::vector<double>& ap, const std::vector<double>& am,
                       std::size_t j, SubsetExtremes& ex) {
  std::size_t n = ap.size();
  std::vector<std::size_t> path;
  path.reserve(j);
  std::function<void(std::size_t, double, double)> recurse =
      [&](std::size_t start, double sum_p, double sum_m) {
        if (path.size() == j) {
          if (sum_p > ex.best_sum_plus) { ex.best_sum_plus = sum_p; ex.arg_max_plus = path; }
          if (sum_p < ex.worst_sum_plus) { ex.worst_sum_plus = sum_p; ex.arg_min_plus = path; }
          if (sum_m > ex.best_sum_minus) { ex.best_sum_minus = sum_m; ex.arg_max_minus = path; }
          if (sum_m < ex.worst_sum_minus) { ex.worst_sum_minus = sum_m; ex.arg_min_minus = path; }
          return;
        }
        for (std::size_t i = start; i + (j - path.size()) <= n; ++i) {
          path.push_back(i);
          recurse(i + 1, sum_p + ap[i], sum_m + am[i]);
          path.pop_back();
        }
      };
  recurse(0, 0.0, 0.0);
}

// Mean of the chosen coordinate values summed in the same order the library
// uses (descending for maxima, ascending for minima), so that the comparison
// can demand bit-exact equality.
double subset_mean(const std::vector<double>& coord,
                   const std::vector<std::size_t>& subset, bool descending) {
  std::vector<double> vals;
  for (std::size_t i : subset) vals.push_back(coord[i]);
  std::sort(vals.begin(), vals.end());
  if (descending) std::reverse(vals.begin(), vals.end());
  double acc = std::accumulate(vals.begin(), vals.end(), 0.0);
  return acc / static_cast<double>(subset.size());
}

void criterion_worst_case(Criterion& c) {
  auto start = Clock::now();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> val(0.01, 0.6);

  // Worked instance: P+ = {0.1, 0.2, 0.3}, P- = {0.1, 0.4}, j = 3.
  {
    battery::SampleSpaces sp;
    sp.p_plus = {0.1, 0.2, 0.3};
    sp.p_minus = {0.1, 0.4};
    auto w = risk::worst_case_params(sp, risk::UncertaintyLevel::from_j(3, 6));
    c.expect(std::abs(w.a_plus_tilde - (0.3 + 0.3 + 0.2) / 3.0) <= 1e-12,
             "worked instance tilde+ mismatch: " + fmt(w.a_plus_tilde));
  }

  for (std::size_t n1 = 1; n1 <= 5 && c.ok; ++n1) {
    for (std::size_t n2 = 1; n2 <= 5 && c.ok; ++n2) {
      battery::SampleSpaces sp;
      for (std::size_t i = 0; i < n1; ++i) sp.p_plus.push_back(val(rng));
      for (std::size_t i = 0; i < n2; ++i) sp.p_minus.push_back(val(rng));
      std::sort(sp.p_plus.begin(), sp.p_plus.end());
      std::sort(sp.p_minus.begin(), sp.p_minus.end());

      std::vector<double> ap, am;  // product-space coordinates
      for (double a : sp.p_plus)
        for (double b : sp.p_minus) {
          ap.push_back(a);
          am.push_back(b);
        }
      std::size_t n = n1 * n2;
      for (std::size_t j = 1; j <= n && c.ok; ++j) {
        auto w = risk::worst_case_params(sp, risk::UncertaintyLevel::from_j(j, n));
        SubsetExtremes ex;
        enumerate_subsets(ap, am, j, ex);
        auto tag = [&](const char* which) {
          return std::string(which) + " at n1=" + std::to_string(n1) +
                 " n2=" + std::to_string(n2) + " j=" + std::to_string(j);
        };
        c.expect(w.a_plus_tilde == subset_mean(ap, ex.arg_max_plus, true),
                 tag("a+ tilde"));
        c.expect(w.a_plus_floor == subset_mean(ap, ex.arg_min_plus, false),
                 tag("a+ floor"));
        c.expect(w.a_minus_tilde == subset_mean(am, ex.arg_max_minus, true),
                 tag("a- tilde"));
        c.expect(w.a_minus_floor == subset_mean(am, ex.arg_min_minus, false),
                 tag("a- floor"));
      }
    }
  }
  double secs = seconds_since(start);
  c.expect(secs < 10.0, "took " + fmt(secs) + " s >= 10 s");
}

// ---------------------------------------------------------------------------
// Criterion 3: support-function feasibility vs vertex enumeration.

void criterion_robust_feasibility(Criterion& c) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200 && c.ok; ++trial) {
    std::size_t n1 = 1 + rng() % 4;
    std::size_t n2 = 1 + rng() % 3;
    std::size_t n = n1 * n2;  // <= 12
    std::size_t j = 1 + rng() % std::min<std::size_t>(4, n);

    battery::SampleSpaces sp;
    for (std::size_t i = 0; i < n1; ++i) sp.p_plus.push_back(0.02 + 0.5 * unit(rng));
    for (std::size_t i = 0; i < n2; ++i) sp.p_minus.push_back(0.02 + 0.5 * unit(rng));
    std::sort(sp.p_plus.begin(), sp.p_plus.end());
    std::sort(sp.p_minus.begin(), sp.p_minus.end());
    auto level = risk::UncertaintyLevel::from_j(j, n);

    risk::RobustConstraint rc;
    rc.coeff_plus = -2.0 + 4.0 * unit(rng);
    rc.coeff_minus = -2.0 + 4.0 * unit(rng);

    // Vertices of the uncertainty set: all j-point averages of the product
    // pairs. Evaluate the constraint at each.
    std::vector<double> ap, am;
    for (double a : sp.p_plus)
      for (double b : sp.p_minus) {
        ap.push_back(a);
        am.push_back(b);
      }
    std::vector<double> values;
    std::vector<std::size_t> path;
    std::function<void(std::size_t, double, double)> recurse =
        [&](std::size_t start, double sp_sum, double sm_sum) {
          if (path.size() == j) {
            double dj = static_cast<double>(j);
            values.push_back(rc.coeff_plus * (sp_sum / dj) +
                             rc.coeff_minus * (sm_sum / dj));
            return;
          }
          for (std::size_t i = start; i + (j - path.size()) <= ap.size(); ++i) {
            path.push_back(i);
            recurse(i + 1, sp_sum + ap[i], sm_sum + am[i]);
            path.pop_back();
          }
        };
    recurse(0, 0.0, 0.0);
    double v_min = *std::min_element(values.begin(), values.end());
    double v_max = *std::max_element(values.begin(), values.end());

    // Bounds straddle the attained range with O(0.1) margins, so the two
    // formulations cannot disagree by rounding alone.
    rc.lower = v_min + (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.05 + 0.3 * unit(rng));
    rc.upper = v_max + (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.05 + 0.3 * unit(rng));

    bool expected = v_min >= rc.lower && v_max <= rc.upper;
    bool got = risk::robust_feasible(rc, sp, level);
    c.expect(got == expected, "disagreement on trial " + std::to_string(trial) +
                                  " (vertex says " +
                                  std::string(expected ? "feasible" : "infeasible") +
                                  ")");
  }
}

// ---------------------------------------------------------------------------
// Criterion 4: CVaR coherence properties and endpoint identities.

void criterion_cvar(Criterion& c) {
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 400 && c.ok; ++trial) {
    std::size_t n = 3 + rng() % 28;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = -5.0 + 10.0 * unit(rng);
      y[i] = x[i] + 3.0 * unit(rng);  // y >= x elementwise
    }
    std::size_t j = 1 + rng() % n;
    double alpha = static_cast<double>(j) / static_cast<double>(n);

    double cx = risk::cvar(x, alpha);
    double scale = 0.1 + 5.0 * unit(rng);
    std::vector<double> xs(n), xt(n);
    double shift = -3.0 + 6.0 * unit(rng);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = scale * x[i];
      xt[i] = x[i] + shift;
    }
    c.expect(std::abs(risk::cvar(xs, alpha) - scale * cx) <= 1e-12,
             "positive homogeneity violated at trial " + std::to_string(trial));
    c.expect(std::abs(risk::cvar(xt, alpha) - (cx - shift)) <= 1e-12,
             "translation invariance violated at trial " + std::to_string(trial));
    c.expect(risk::cvar(y, alpha) <= cx + 1e-12,
             "monotonicity violated at trial " + std::to_string(trial));

    double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    c.expect(std::abs(risk::cvar(x, 1.0) + mean) <= 1e-12,
             "alpha=1 is not the negated mean at trial " + std::to_string(trial));
    double alpha_min = 1.0 / static_cast<double>(n);
    double xmin = *std::min_element(x.begin(), x.end());
    c.expect(std::abs(risk::cvar(x, alpha_min) + xmin) <= 1e-12,
             "alpha=1/N is not the negated minimum at trial " + std::to_string(trial));
  }
}

// ---------------------------------------------------------------------------
// Criterion 5: identification recovers known battery parameters from data
// generated by the battery model itself.

void criterion_identification(Criterion& c) {
  std::mt19937_64 rng(555);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 10 && c.ok; ++trial) {
    battery::BatteryParams truth;
    truth.a_plus = 0.05 + 0.10 * unit(rng);
    truth.a_minus = 0.05 + 0.10 * unit(rng);
    truth.b_f = 0.10 + 0.30 * unit(rng);

    // Alternating-sign request blocks separated by long recoveries; the
    // state column follows the battery equation exactly, against a flat
    // nominal prediction.
    const double f0 = 0.5;
    std::vector<double> requests, states;
    double s = f0;
    auto push_zero = [&](int count) {
      for (int i = 0; i < count; ++i) {
        states.push_back(s);
        requests.push_back(0.0);
        s = battery::step(s, 0.0, f0, f0, truth);
      }
    };
    auto push_run = [&](double r, int count) {
      for (int i = 0; i < count; ++i) {
        states.push_back(s);
        requests.push_back(r);
        s = battery::step(s, r, f0, f0, truth);
      }
    };
    push_zero(10);
    for (int block = 0; block < 8; ++block) {
      double mag = 0.2 + 0.25 * unit(rng);
      push_run(block % 2 == 0 ? mag : -mag, 6);
      push_zero(40);
    }
    states.push_back(s);
    requests.push_back(0.0);

    sim::Trace tr;
    std::size_t n = states.size();
    tr.time_h.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      tr.time_h[i] = static_cast<double>(i) / 12.0;
    tr.t_out.assign(n, 0.0);
    tr.irradiance.assign(n, 0.0);
    tr.t_in.assign(n, 0.0);
    tr.u.assign(n, 0.0);
    tr.u_baseline.assign(n, 0.0);
    tr.delta_under.assign(n, 0.0);
    tr.delta_over.assign(n, 0.0);
    tr.state = states;
    tr.request = requests;
    std::vector<double> nominal_series(n, f0);

    battery::IdentificationResult res = battery::identify(
        std::span(&tr, 1), std::span(&nominal_series, 1), {});

    c.expect(!res.spaces.p_plus.empty() && !res.spaces.p_minus.empty(),
             "no samples recovered at trial " + std::to_string(trial));
    for (double a : res.spaces.p_plus)
      c.expect(std::abs(a - truth.a_plus) <= 0.01 * truth.a_plus,
               "a+ sample " + fmt(a) + " off from " + fmt(truth.a_plus) +
                   " by > 1% at trial " + std::to_string(trial));
    for (double a : res.spaces.p_minus)
      c.expect(std::abs(a - truth.a_minus) <= 0.01 * truth.a_minus,
               "a- sample " + fmt(a) + " off from " + fmt(truth.a_minus) +
                   " by > 1% at trial " + std::to_string(trial));
    c.expect(std::abs(res.b_f - truth.b_f) <= 0.02 * truth.b_f,
             "b_f " + fmt(res.b_f) + " off from " + fmt(truth.b_f) +
                 " by > 2% at trial " + std::to_string(trial));
  }
}

// ---------------------------------------------------------------------------
// Criteria 6-8 share one full-pipeline run at the default configuration.

struct PipelineRun {
  pipeline::PipelineConfig cfg;
  io::ModelArtifact artifact;
  sim::WeatherSeries weather;
  sim::Trace baseline;  // noise-free
  std::vector<risk::UncertaintyLevel> levels;
  std::vector<envelope::FlexibilityEnvelope> predictions;
  envelope::FlexibilityEnvelope truth;
  std::vector<envelope::EnvelopeMetrics> metrics;
  double seconds = 0.0;
};

PipelineRun run_default_pipeline() {
  auto start = Clock::now();
  PipelineRun run;
  fs::path root = fs::temp_directory_path() / "flexcast-acceptance";
  fs::remove_all(root);

  pipeline::PipelineConfig& cfg = run.cfg;
  cfg.paths.data_dir = (root / "data").string();
  cfg.paths.artifact = (root / "data" / "model.json").string();
  cfg.paths.out_dir = (root / "out").string();
  cfg.validate();

  pipeline::cmd_generate(cfg);
  run.artifact = pipeline::cmd_fit(cfg);
  run.weather = pipeline::detail::load_weather(cfg);

  std::size_t n_total = run.artifact.spaces.n_total();
  for (const auto& a : cfg.envelope.alphas)
    run.levels.push_back(pipeline::resolve_alpha(a, n_total));

  std::vector<double> power_grid =
      pipeline::make_power_grid(cfg.envelope.n_power, cfg.envelope.power_max);
  std::vector<std::size_t> time_grid =
      pipeline::detail::eval_time_grid(cfg, 0, cfg.envelope.eval_days);

  std::vector<double> f_series =
      nominal::predict_series(run.artifact.model, run.weather);

  sim::SimConfig nf = cfg.sim;
  nf.noise_std = 0.0;
  run.baseline = pipeline::detail::noise_free_baseline(cfg, run.weather);
  run.truth = sim::true_envelope(nf, run.weather, run.baseline, power_grid,
                                 time_grid, cfg.envelope.cap_steps,
                                 cfg.envelope.eval_epsilon);

  auto spd = static_cast<std::size_t>(cfg.sim.steps_per_day());
  for (const auto& lv : run.levels) {
    envelope::FlexibilityEnvelope pred = envelope::predict_envelope(
        f_series, run.artifact.spaces, run.artifact.b_f, lv, power_grid,
        time_grid, cfg.envelope.cap_steps, {});
    run.metrics.push_back(envelope::evaluate(pred, run.truth, spd));
    run.predictions.push_back(std::move(pred));
  }
  run.seconds = seconds_since(start);
  return run;
}

void criterion_pipeline_trend(Criterion& c, const PipelineRun& run) {
  c.expect(run.levels.size() == 3, "expected three alpha levels");
  if (!c.ok) return;
  c.expect(run.levels[0].j == 1, "first level is not 1/N");
  c.expect(run.levels[2].j == run.levels[2].n_total, "last level is not 1.0");
  c.expect(run.levels[0].alpha() < run.levels[1].alpha() &&
               run.levels[1].alpha() < run.levels[2].alpha(),
           "alpha levels not ascending");

  const auto& m = run.metrics;
  c.expect(m[0].infeasible_fraction <= 0.02,
           "infeasible fraction at 1/N is " + fmt(m[0].infeasible_fraction) +
               " > 0.02");
  c.expect(m[0].infeasible_fraction <= m[1].infeasible_fraction &&
               m[1].infeasible_fraction <= m[2].infeasible_fraction,
           "infeasible fraction not non-decreasing in alpha: " +
               fmt(m[0].infeasible_fraction) + ", " + fmt(m[1].infeasible_fraction) +
               ", " + fmt(m[2].infeasible_fraction));
  c.expect(m[0].mean_abs_error >= m[1].mean_abs_error &&
               m[1].mean_abs_error >= m[2].mean_abs_error,
           "MAE not non-increasing in alpha: " + fmt(m[0].mean_abs_error) + ", " +
               fmt(m[1].mean_abs_error) + ", " + fmt(m[2].mean_abs_error));
  c.expect(run.seconds < 300.0,
           "pipeline took " + fmt(run.seconds) + " s >= 300 s");
  c.note = "infeasible " + fmt(m[0].infeasible_fraction) + "/" +
           fmt(m[1].infeasible_fraction) + "/" + fmt(m[2].infeasible_fraction) +
           ", mae " + fmt(m[0].mean_abs_error) + "/" + fmt(m[1].mean_abs_error) +
           "/" + fmt(m[2].mean_abs_error);
}

void criterion_envelope_structure(Criterion& c, const PipelineRun& run) {
  std::vector<const envelope::FlexibilityEnvelope*> envs{&run.truth};
  for (const auto& e : run.predictions) envs.push_back(&e);

  for (const auto* env : envs) {
    for (std::size_t i = 0; i < env->power_grid.size(); ++i) {
      for (std::size_t j = 0; j < env->time_grid.size(); ++j) {
        int d = env->at(i, j);
        c.expect(d >= 0 && d <= 288,
                 "cell duration " + std::to_string(d) + " outside [0, 288]");
        if (env->power_grid[i] == 0.0)
          c.expect(d == env->cap_steps, "p=0 cell is " + std::to_string(d) +
                                            ", not cap " +
                                            std::to_string(env->cap_steps));
      }
    }
  }

  // Cellwise alpha-monotonicity over every emitted pair of predictions
  // (levels are sorted ascending in alpha; smaller alpha is more cautious).
  for (std::size_t a = 0; a < run.predictions.size() && c.ok; ++a) {
    for (std::size_t b = a + 1; b < run.predictions.size() && c.ok; ++b) {
      for (std::size_t cell = 0; cell < run.predictions[a].durations.size();
           ++cell) {
        c.expect(run.predictions[a].durations[cell] <=
                     run.predictions[b].durations[cell],
                 "alpha monotonicity violated between levels " +
                     std::to_string(a) + " and " + std::to_string(b) +
                     " at cell " + std::to_string(cell));
        if (!c.ok) break;
      }
    }
  }
}

void criterion_simulator_sanity(Criterion& c, const PipelineRun& run) {
  // States recorded on the generated traces stay in [0, 1].
  for (const char* name : {"nominal.csv", "requests.csv"}) {
    sim::Trace tr = pipeline::detail::load_trace(run.cfg, name);
    for (std::size_t i = 0; i < tr.size(); ++i)
      c.expect(tr.state[i] >= 0.0 && tr.state[i] <= 1.0,
               std::string(name) + " state out of [0,1] at step " +
                   std::to_string(i));
  }

  // RC equilibrium: constant weather and input converge to
  // T_out + R * P_max * u.
  {
    sim::SimConfig cfg;
    double t_out = 1.5, u = 0.6, t = cfg.setpoint;
    for (int i = 0; i < 20000; ++i)
      t = sim::detail::plant_next(t, t_out, 0.0, u, cfg);
    double expected = t_out + cfg.thermal_resistance * cfg.hp_max_thermal_power * u;
    c.expect(std::abs(t - expected) <= 1e-6,
             "equilibrium " + fmt(t) + " vs formula " + fmt(expected));
  }

  // The linear scan in true_envelope equals a bisection oracle with its own
  // Euler arithmetic on 20 random cells.
  sim::SimConfig nf = run.cfg.sim;
  nf.noise_std = 0.0;
  double lo = nf.temp_min - run.cfg.envelope.eval_epsilon;
  double hi = nf.temp_max + run.cfg.envelope.eval_epsilon;
  int cap = run.cfg.envelope.cap_steps;
  std::mt19937_64 rng(31337);
  const auto& truth = run.truth;
  for (int pick = 0; pick < 20; ++pick) {
    std::size_t i = rng() % truth.power_grid.size();
    std::size_t j = rng() % truth.time_grid.size();
    double p = truth.power_grid[i];
    if (p == 0.0) continue;  // covered by the structure criterion
    std::size_t start = truth.time_grid[j];

    auto survives = [&](int k) {
      double t = run.baseline.t_in[start];
      for (int step = 0; step < k; ++step) {
        std::size_t abs = start + static_cast<std::size_t>(step);
        double u = std::clamp(run.baseline.u_baseline[abs] + p, 0.0, 1.0);
        double q = (run.weather.t_out[abs] - t) / nf.thermal_resistance +
                   nf.hp_max_thermal_power * u +
                   nf.solar_aperture * run.weather.irradiance[abs] / 1000.0;
        t += nf.dt_hours() / nf.thermal_capacitance * q;
        if (t < lo || t > hi) return false;
      }
      return true;
    };
    int low = 0, high = cap;  // invariant: survives(low), first failure > low
    while (low < high) {
      int mid = (low + high + 1) / 2;
      if (survives(mid))
        low = mid;
      else
        high = mid - 1;
    }
    c.expect(truth.at(i, j) == low,
             "cell (" + std::to_string(i) + "," + std::to_string(j) +
                 "): scan " + std::to_string(truth.at(i, j)) + " vs bisection " +
                 std::to_string(low));
  }
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int idx, const char* name, const Criterion& c, double secs) {
    std::string tail;
    if (!c.note.empty()) tail += " (" + c.note + ")";
    if (!c.ok) tail += " — " + c.detail;
    std::printf("[%s] %d. %s%s (%.2f s)\n", c.ok ? "PASS" : "FAIL", idx, name,
                tail.c_str(), secs);
    std::fflush(stdout);
    if (!c.ok) ++failures;
  };
  auto run_criterion = [&](int idx, const char* name, auto&& body) {
    Criterion c;
    auto start = Clock::now();
    try {
      body(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    report(idx, name, c, seconds_since(start));
  };

  run_criterion(1, "closed-form propagation equals iterated stepping",
                [](Criterion& c) { criterion_lemma1(c); });
  run_criterion(2, "worst-case gains match brute-force subset enumeration",
                [](Criterion& c) { criterion_worst_case(c); });
  run_criterion(3, "support-function feasibility matches vertex enumeration",
                [](Criterion& c) { criterion_robust_feasibility(c); });
  run_criterion(4, "cvar coherence and endpoint identities",
                [](Criterion& c) { criterion_cvar(c); });
  run_criterion(5, "identification recovers known battery parameters",
                [](Criterion& c) { criterion_identification(c); });

  std::optional<PipelineRun> run;
  run_criterion(6, "full pipeline reproduces the risk/accuracy trend",
                [&](Criterion& c) {
                  run.emplace(run_default_pipeline());
                  criterion_pipeline_trend(c, *run);
                });
  run_criterion(7, "envelope structure: zero row, cap, alpha monotonicity",
                [&](Criterion& c) {
                  if (!run) {
                    c.expect(false, "pipeline run unavailable");
                    return;
                  }
                  criterion_envelope_structure(c, *run);
                });
  run_criterion(8, "simulator sanity: state range, equilibrium, oracle",
                [&](Criterion& c) {
                  if (!run) {
                    c.expect(false, "pipeline run unavailable");
                    return;
                  }
                  criterion_simulator_sanity(c, *run);
                });

  return failures;
}
