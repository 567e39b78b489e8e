#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "frailnet/dataset.hpp"
#include "frailnet/errors.hpp"
#include "frailnet/rng.hpp"

namespace frailnet {

/**
 * Clustered Weibull-frailty simulation: conditional hazard
 * u * shape * t^(shape-1) * exp(f(x)) with gamma frailties of mean one and
 * variance alpha, AR(1) covariates, and exponential censoring calibrated to a
 * target marginal rate.
 */
struct SimConfig {
  int clusters = 1000;
  int cluster_size = 8;
  std::vector<int> cluster_sizes;  // overrides cluster_size when non-empty
  double rho = 0.5;
  double weibull_shape = 2.0;
  double alpha = 1.0;            // frailty variance; 0 means no frailty
  double censoring_rate = 0.15;  // target; 0 disables censoring
  int validation_per_cluster = 2;
  int test_per_cluster = 2;
  std::uint64_t seed = 0;
};

struct SimTruth {
  Eigen::VectorXd cluster_u;   // frailties, one per cluster
  Eigen::VectorXd f;           // true risk per record
  Eigen::VectorXd event_time;  // latent T
  Eigen::VectorXd censor_time; // latent C, +inf when censoring is off
  double lambda_c = 0.0;       // calibrated exponential censoring rate
  double target_censoring = 0.0;
  double realized_censoring = 0.0;
};

struct SimOutput {
  ClusteredDataset dataset;
  SplitSpec split;
  SimTruth truth;
};

inline constexpr int kSimCovariates = 5;

/** The nonlinear risk surface the simulation draws from. */
inline double true_risk(const Eigen::VectorXd& x) {
  if (x.size() != kSimCovariates) throw ShapeMismatchError("true_risk expects 5 covariates");
  return 0.4 * std::cos(x[0]) + 0.3 * std::cos(x[1]) + 0.6 * std::cos(x[2]) +
         0.5 * x[1] * x[2] + 0.4 / (x[3] * x[3] + 1.0) + 0.5 / (x[4] * x[4] + 1.0);
}

/** One stationary AR(1) covariate row: unit variance, corr(x_j, x_k) = rho^|j-k|. */
inline Eigen::VectorXd sample_covariates(Rng& rng, int p = kSimCovariates, double rho = 0.5) {
  if (p < 1 || std::abs(rho) >= 1.0) throw InvalidArgumentError("sample_covariates: bad arguments");
  Eigen::VectorXd x(p);
  x[0] = rng.normal();
  const double innovation = std::sqrt(1.0 - rho * rho);
  for (int j = 1; j < p; ++j) x[j] = rho * x[j - 1] + innovation * rng.normal();
  return x;
}

/** Inverse-transform Weibull event time given frailty u and log-risk f. */
inline double sample_event_time(double uniform_draw, double u, double f, double shape) {
  return std::pow(-std::log(uniform_draw) / (u * std::exp(f)), 1.0 / shape);
}

namespace detail {

struct Pilot {
  std::vector<double> event_times;
  std::vector<double> unit_exponentials;
};

inline double realized_rate(const Pilot& pilot, double lambda) {
  long censored = 0;
  for (std::size_t m = 0; m < pilot.event_times.size(); ++m)
    if (pilot.unit_exponentials[m] / lambda < pilot.event_times[m]) ++censored;
  return static_cast<double>(censored) / pilot.event_times.size();
}

}  // namespace detail

/**
 * Exponential censoring rate hitting the target marginal censoring fraction,
 * by monotone bisection over a fixed pilot sample of event times and unit
 * exponentials. Larger lambda censors more, so the bracket is expanded until
 * it straddles the target, then halved to convergence.
 */
inline double calibrate_censoring(Rng& rng, const SimConfig& cfg, double target,
                                  int pilot_size = 100000) {
  if (target <= 0.0) return 0.0;
  if (target >= 1.0) throw InvalidArgumentError("censoring target must be below 1");
  detail::Pilot pilot;
  pilot.event_times.reserve(pilot_size);
  pilot.unit_exponentials.reserve(pilot_size);
  for (int m = 0; m < pilot_size; ++m) {
    const double u = (cfg.alpha > 0.0) ? rng.gamma(1.0 / cfg.alpha, cfg.alpha) : 1.0;
    const Eigen::VectorXd x = sample_covariates(rng, kSimCovariates, cfg.rho);
    pilot.event_times.push_back(
        sample_event_time(rng.uniform_open(), u, true_risk(x), cfg.weibull_shape));
    pilot.unit_exponentials.push_back(rng.exponential(1.0));
  }

  double lo = 1e-8, hi = 1.0;
  int expansions = 0;
  while (detail::realized_rate(pilot, hi) < target) {
    hi *= 10.0;
    if (++expansions > 60) throw BracketFailureError("censoring calibration: no upper bracket");
  }
  expansions = 0;
  while (detail::realized_rate(pilot, lo) > target) {
    lo /= 10.0;
    if (++expansions > 60) throw BracketFailureError("censoring calibration: no lower bracket");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (detail::realized_rate(pilot, mid) < target) lo = mid; else hi = mid;
    if (hi / lo < 1.0 + 1e-12) break;
  }
  return std::sqrt(lo * hi);
}

inline SimOutput generate(const SimConfig& cfg) {
  if (cfg.clusters < 1) throw InvalidArgumentError("need at least one cluster");
  if (!(cfg.alpha >= 0.0)) throw InvalidArgumentError("alpha must be nonnegative");
  std::vector<int> sizes = cfg.cluster_sizes;
  if (sizes.empty()) sizes.assign(cfg.clusters, cfg.cluster_size);
  if (static_cast<int>(sizes.size()) != cfg.clusters)
    throw InvalidArgumentError("cluster_sizes length must match clusters");
  const int holdout = cfg.validation_per_cluster + cfg.test_per_cluster;
  for (int n_i : sizes)
    if (n_i < holdout + 1)
      throw InvalidArgumentError("cluster size " + std::to_string(n_i) +
                                 " leaves no training records");

  Rng rng_u = Rng::stream(cfg.seed, {10});
  Rng rng_x = Rng::stream(cfg.seed, {11});
  Rng rng_t = Rng::stream(cfg.seed, {12});
  Rng rng_c = Rng::stream(cfg.seed, {13});
  Rng rng_cal = Rng::stream(cfg.seed, {14});

  const double lambda_c = calibrate_censoring(rng_cal, cfg, cfg.censoring_rate);

  const int total = std::accumulate(sizes.begin(), sizes.end(), 0);
  SimTruth truth;
  truth.cluster_u.resize(cfg.clusters);
  truth.f.resize(total);
  truth.event_time.resize(total);
  truth.censor_time.resize(total);
  truth.lambda_c = lambda_c;
  truth.target_censoring = cfg.censoring_rate;

  std::vector<SurvivalRecord> records;
  records.reserve(total);
  SplitSpec split_spec;
  split_spec.assignment.reserve(total);
  long censored = 0;
  int r = 0;
  for (int i = 0; i < cfg.clusters; ++i) {
    const double u = (cfg.alpha > 0.0) ? rng_u.gamma(1.0 / cfg.alpha, cfg.alpha) : 1.0;
    truth.cluster_u[i] = u;
    const int train_count = sizes[i] - holdout;
    for (int j = 0; j < sizes[i]; ++j, ++r) {
      SurvivalRecord rec;
      rec.cluster = std::to_string(i);
      const Eigen::VectorXd x = sample_covariates(rng_x, kSimCovariates, cfg.rho);
      const double f = true_risk(x);
      const double t_event = sample_event_time(rng_t.uniform_open(), u, f, cfg.weibull_shape);
      const double t_cens = (lambda_c > 0.0) ? rng_c.exponential(lambda_c)
                                             : std::numeric_limits<double>::infinity();
      truth.f[r] = f;
      truth.event_time[r] = t_event;
      truth.censor_time[r] = t_cens;
      rec.time = std::min(t_event, t_cens);
      rec.status = (t_event <= t_cens) ? 1 : 0;
      censored += 1 - rec.status;
      rec.covariates.assign(x.data(), x.data() + kSimCovariates);
      records.push_back(std::move(rec));
      if (j < train_count)
        split_spec.assignment.push_back(Fold::train);
      else if (j < train_count + cfg.validation_per_cluster)
        split_spec.assignment.push_back(Fold::validation);
      else
        split_spec.assignment.push_back(Fold::test);
    }
  }
  truth.realized_censoring = static_cast<double>(censored) / total;

  SimOutput out{ClusteredDataset::from_records(records), std::move(split_spec), std::move(truth)};
  return out;
}

}  // namespace frailnet
