#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "flexcast/sim.hpp"

// Request-free nominal-state regressor: kernel ridge regression with a
// squared exponential kernel on current and lagged weather variables plus a
// periodic time-of-day encoding.
namespace flexcast::nominal {

struct FeatureSet {
  Eigen::MatrixXd inputs;   // raw (un-normalized) features, one row per sample
  Eigen::VectorXd targets;  // nominal state s_t
  // Trace step index each row was built from (row r uses steps
  // step_index[r]-n_lags+1 .. step_index[r]).
  std::vector<std::size_t> step_index;
};

// Feature layout: [t_out lags oldest..current, irradiance lags, sin(tod), cos(tod)].
inline int feature_dim(int n_lags) { return 2 * n_lags + 2; }

inline Eigen::VectorXd feature_row(const std::vector<double>& t_out,
                                   const std::vector<double>& irradiance,
                                   const std::vector<double>& time_h,
                                   std::size_t idx, int n_lags) {
  if (idx + 1 < static_cast<std::size_t>(n_lags))
    throw std::out_of_range("feature_row: not enough history for requested lags");
  Eigen::VectorXd x(feature_dim(n_lags));
  for (int l = 0; l < n_lags; ++l) {
    std::size_t s = idx + 1 - n_lags + l;
    x[l] = t_out[s];
    x[n_lags + l] = irradiance[s];
  }
  double tod = std::fmod(time_h[idx], 24.0) / 24.0;
  x[2 * n_lags] = std::sin(2.0 * std::numbers::pi * tod);
  x[2 * n_lags + 1] = std::cos(2.0 * std::numbers::pi * tod);
  return x;
}

// One (features, state) sample per step t >= n_lags-1 of a request-free trace.
inline FeatureSet build_features(const sim::Trace& trace, int n_lags) {
  if (n_lags < 1) throw std::invalid_argument("build_features: n_lags must be >= 1");
  for (double r : trace.request)
    if (r != 0.0)
      throw std::invalid_argument("build_features: training trace must be request-free");
  std::size_t n = trace.size();
  if (n < static_cast<std::size_t>(n_lags))
    throw std::invalid_argument("build_features: trace shorter than lag window");
  std::size_t rows = n - n_lags + 1;
  FeatureSet fs;
  fs.inputs.resize(rows, feature_dim(n_lags));
  fs.targets.resize(rows);
  fs.step_index.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t idx = r + n_lags - 1;
    fs.inputs.row(r) =
        feature_row(trace.t_out, trace.irradiance, trace.time_h, idx, n_lags);
    fs.targets[r] = trace.state[idx];
    fs.step_index[r] = idx;
  }
  return fs;
}

// Every k-th row so the dense solve stays at desk scale.
inline FeatureSet subsample(const FeatureSet& fs, std::size_t max_points) {
  std::size_t n = static_cast<std::size_t>(fs.inputs.rows());
  if (max_points == 0 || n <= max_points) return fs;
  std::size_t stride = (n + max_points - 1) / max_points;
  std::size_t rows = (n + stride - 1) / stride;
  FeatureSet out;
  out.inputs.resize(rows, fs.inputs.cols());
  out.targets.resize(rows);
  out.step_index.resize(rows);
  for (std::size_t r = 0, i = 0; i < n; i += stride, ++r) {
    out.inputs.row(r) = fs.inputs.row(i);
    out.targets[r] = fs.targets[i];
    out.step_index[r] = fs.step_index[i];
  }
  return out;
}

struct NominalModel {
  int n_lags = 0;
  Eigen::MatrixXd train_inputs;  // normalized
  Eigen::VectorXd weights;       // dual weights, one per training row
  Eigen::VectorXd lengthscales;  // per dimension, in normalized units
  double ridge = 0.0;
  Eigen::VectorXd feat_mean;
  Eigen::VectorXd feat_std;
  double target_mean = 0.0;
  double target_std = 1.0;
};

namespace detail {

// K_ij = exp(-1/2 sum_d ((x_i,d - x_j,d) / l_d)^2) on pre-scaled inputs
// (columns already divided by their lengthscale).
inline Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& xs,
                                     const Eigen::MatrixXd& ys) {
  Eigen::VectorXd xn = xs.rowwise().squaredNorm();
  Eigen::VectorXd yn = ys.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * xs * ys.transpose()).colwise() + xn;
  d2.rowwise() += yn.transpose();
  return (-0.5 * d2.cwiseMax(0.0)).array().exp();
}

}  // namespace detail

inline NominalModel fit(const FeatureSet& fs, const Eigen::VectorXd& lengthscales,
                        double ridge, int n_lags) {
  std::size_t n = static_cast<std::size_t>(fs.inputs.rows());
  if (n < 2) throw std::invalid_argument("fit: need at least 2 samples");
  if (!(ridge > 0.0) || (lengthscales.array() <= 0.0).any())
    throw std::invalid_argument("fit: hyperparameters must be positive");
  if (lengthscales.size() != fs.inputs.cols())
    throw std::invalid_argument("fit: lengthscale dimension mismatch");

  NominalModel m;
  m.n_lags = n_lags;
  m.lengthscales = lengthscales;
  m.ridge = ridge;
  m.feat_mean = fs.inputs.colwise().mean();
  Eigen::MatrixXd centered = fs.inputs.rowwise() - m.feat_mean.transpose();
  m.feat_std = (centered.array().square().colwise().mean()).sqrt();
  for (Eigen::Index d = 0; d < m.feat_std.size(); ++d)
    if (m.feat_std[d] < 1e-12) m.feat_std[d] = 1.0;
  m.train_inputs = centered.array().rowwise() / m.feat_std.transpose().array();

  m.target_mean = fs.targets.mean();
  double var = (fs.targets.array() - m.target_mean).square().mean();
  m.target_std = std::sqrt(var);
  if (m.target_std < 1e-12) m.target_std = 1.0;
  Eigen::VectorXd y = (fs.targets.array() - m.target_mean) / m.target_std;

  Eigen::MatrixXd scaled =
      m.train_inputs.array().rowwise() / m.lengthscales.transpose().array();
  Eigen::MatrixXd k = detail::kernel_matrix(scaled, scaled);
  k.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "fit: kernel factorization failed (ridge too small or duplicate inputs)");
  m.weights = llt.solve(y);
  return m;
}

inline double predict(const NominalModel& m, const Eigen::VectorXd& raw_features) {
  if (raw_features.size() != m.train_inputs.cols())
    throw std::invalid_argument("predict: feature dimension mismatch");
  Eigen::VectorXd z = ((raw_features - m.feat_mean).array() / m.feat_std.array()) /
                      m.lengthscales.array();
  Eigen::MatrixXd scaled =
      m.train_inputs.array().rowwise() / m.lengthscales.transpose().array();
  Eigen::VectorXd k = detail::kernel_matrix(scaled, z.transpose());
  return m.target_mean + m.target_std * k.dot(m.weights);
}

// Predictions for every step of a weather horizon. Entries before the first
// full lag window repeat the first valid prediction so the vector aligns
// index-for-index with the series.
inline std::vector<double> predict_series(const NominalModel& m,
                                          const std::vector<double>& t_out,
                                          const std::vector<double>& irradiance,
                                          const std::vector<double>& time_h) {
  std::size_t n = time_h.size();
  std::size_t first = static_cast<std::size_t>(m.n_lags) - 1;
  if (n <= first) throw std::invalid_argument("predict_series: series too short");

  Eigen::MatrixXd q(n - first, feature_dim(m.n_lags));
  for (std::size_t i = first; i < n; ++i)
    q.row(i - first) = feature_row(t_out, irradiance, time_h, i, m.n_lags);
  Eigen::MatrixXd qz = (q.rowwise() - m.feat_mean.transpose()).array().rowwise() /
                       m.feat_std.transpose().array();
  qz = qz.array().rowwise() / m.lengthscales.transpose().array();
  Eigen::MatrixXd scaled =
      m.train_inputs.array().rowwise() / m.lengthscales.transpose().array();
  Eigen::VectorXd preds =
      (detail::kernel_matrix(qz, scaled) * m.weights).array() * m.target_std +
      m.target_mean;

  std::vector<double> out(n);
  for (std::size_t i = first; i < n; ++i) out[i] = preds[i - first];
  for (std::size_t i = 0; i < first; ++i) out[i] = preds[0];
  return out;
}

inline std::vector<double> predict_series(const NominalModel& m,
                                          const sim::WeatherSeries& w) {
  return predict_series(m, w.t_out, w.irradiance, w.time_h);
}

inline std::vector<double> predict_series(const NominalModel& m,
                                          const sim::Trace& tr) {
  return predict_series(m, tr.t_out, tr.irradiance, tr.time_h);
}

inline double rmse(const NominalModel& m, const FeatureSet& fs) {
  double acc = 0.0;
  for (Eigen::Index r = 0; r < fs.inputs.rows(); ++r) {
    double e = predict(m, fs.inputs.row(r)) - fs.targets[r];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(fs.inputs.rows()));
}

struct GridSearchResult {
  NominalModel model;
  double lengthscale = 0.0;
  double ridge = 0.0;
  double holdout_rmse = 0.0;
};

// Shared-lengthscale grid search with a time-ordered hold-out split; the
// winner is refit on all samples.
inline GridSearchResult grid_search_fit(const FeatureSet& fs,
                                        const std::vector<double>& lengthscale_grid,
                                        const std::vector<double>& ridge_grid,
                                        int n_lags, double holdout_frac = 0.25) {
  std::size_t n = static_cast<std::size_t>(fs.inputs.rows());
  auto n_train = static_cast<std::size_t>(
      std::lround(static_cast<double>(n) * (1.0 - holdout_frac)));
  n_train = std::clamp<std::size_t>(n_train, 2, n > 2 ? n - 1 : 2);

  auto take = [&](std::size_t begin, std::size_t end) {
    FeatureSet part;
    part.inputs = fs.inputs.middleRows(begin, end - begin);
    part.targets = fs.targets.segment(begin, end - begin);
    part.step_index.assign(fs.step_index.begin() + begin, fs.step_index.begin() + end);
    return part;
  };
  FeatureSet head = take(0, n_train);
  FeatureSet tail = take(n_train, n);

  GridSearchResult best;
  best.holdout_rmse = std::numeric_limits<double>::infinity();
  Eigen::Index dim = fs.inputs.cols();
  for (double ls : lengthscale_grid) {
    for (double rg : ridge_grid) {
      NominalModel cand = fit(head, Eigen::VectorXd::Constant(dim, ls), rg, n_lags);
      double err = rmse(cand, tail);
      if (err < best.holdout_rmse) {
        best.holdout_rmse = err;
        best.lengthscale = ls;
        best.ridge = rg;
      }
    }
  }
  best.model = fit(fs, Eigen::VectorXd::Constant(dim, best.lengthscale), best.ridge,
                   n_lags);
  return best;
}

}  // namespace flexcast::nominal
