#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "frailnet/dataset.hpp"
#include "frailnet/errors.hpp"
#include "frailnet/likelihood.hpp"
#include "frailnet/nn.hpp"

namespace frailnet {

/**
 * Step-function baseline hazard on the estimated event-time grid. The
 * cumulative hazard is 0 before the first event time and flat after the last;
 * log_hazard is defined only exactly on the grid.
 */
class BaselineHazard {
 public:
  BaselineHazard() = default;
  BaselineHazard(std::vector<double> times, std::vector<double> increments)
      : times_(std::move(times)), increments_(std::move(increments)) {
    if (times_.size() != increments_.size())
      throw ShapeMismatchError("baseline: times and increments differ in length");
    cumulative_.resize(times_.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < times_.size(); ++k) {
      if (k > 0 && times_[k] <= times_[k - 1])
        throw InvalidArgumentError("baseline times must be strictly increasing");
      acc += increments_[k];
      cumulative_[k] = acc;
    }
  }

  double cum_hazard(double t) const {
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return 0.0;
    return cumulative_[static_cast<std::size_t>(it - times_.begin()) - 1];
  }

  double log_hazard(double t) const {
    auto it = std::lower_bound(times_.begin(), times_.end(), t);
    if (it == times_.end() || *it != t) throw BaselineUndefinedAtTimeError(t);
    return std::log(increments_[static_cast<std::size_t>(it - times_.begin())]);
  }

  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& increments() const { return increments_; }
  bool empty() const { return times_.empty(); }

 private:
  std::vector<double> times_;
  std::vector<double> increments_;
  std::vector<double> cumulative_;
};

/** Weibull hazard shape * t^(shape-1); the parametric truth in simulations. */
struct WeibullBaseline {
  double shape = 1.0;
  double log_hazard(double t) const { return std::log(shape) + (shape - 1.0) * std::log(t); }
  double cum_hazard(double t) const { return std::pow(t, shape); }
};

/** Breslow baseline increments d_k / sum_{R_k} exp(eta). */
inline BaselineHazard estimate_baseline(const ClusteredDataset& ds, const Eigen::VectorXd& eta) {
  detail::BreslowSweep sw = detail::breslow_sweep(ds, eta);
  const RiskIndex& idx = ds.risk_index();
  if (idx.num_event_times() == 0) throw NoEventsError();
  std::vector<double> increments(idx.event_times.size());
  for (int k = 0; k < idx.num_event_times(); ++k)
    increments[k] = idx.multiplicities[k] *
                    std::exp(-sw.center) / std::max(sw.risk_sums[k], 1e-100);
  return BaselineHazard(idx.event_times, increments);
}

/**
 * Closed-form best unbiased predictor of the frailties:
 * u_i = (d_i+ + 1/alpha) / (Lambda_i+ + 1/alpha).
 */
inline Eigen::VectorXd frailty_bup(const Eigen::VectorXd& event_counts,
                                   const Eigen::VectorXd& cum_hazards, double alpha) {
  if (!(alpha > 0.0)) throw NonPositiveAlphaError(alpha);
  if (event_counts.size() != cum_hazards.size())
    throw ShapeMismatchError("frailty_bup: size mismatch");
  const double inv = 1.0 / alpha;
  return (event_counts.array() + inv) / (cum_hazards.array() + inv);
}

/** Lambda_i+ = sum_j Lambda_0(y_ij) exp(eta_m_ij), per cluster. eta_m excludes frailty. */
template <class Baseline>
Eigen::VectorXd cluster_cum_hazard(const ClusteredDataset& ds, const Eigen::VectorXd& eta_m,
                                   const Baseline& baseline) {
  if (eta_m.size() != ds.num_records())
    throw ShapeMismatchError("cluster_cum_hazard: eta size mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(ds.num_clusters());
  for (int r : ds.canonical_order())
    out[ds.cluster(r)] += baseline.cum_hazard(ds.time(r)) * std::exp(eta_m[r]);
  return out;
}

// ---------------------------------------------------------------------------
// Fitted models
// ---------------------------------------------------------------------------

enum class ModelKind { cox, dnn_cox, fm, dnn_fm };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::cox: return "cox";
    case ModelKind::dnn_cox: return "dnn_cox";
    case ModelKind::fm: return "fm";
    default: return "dnn_fm";
  }
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "cox") return ModelKind::cox;
  if (s == "dnn_cox") return ModelKind::dnn_cox;
  if (s == "fm") return ModelKind::fm;
  if (s == "dnn_fm") return ModelKind::dnn_fm;
  throw InvalidArgumentError("unknown model kind '" + s + "'");
}

struct FitMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  int outer_iterations = 0;
  double final_train_loss = 0.0;
  std::vector<double> alpha_trace;
  bool converged = true;
  bool alpha_at_boundary = false;
  std::string message;
};

struct FittedModel {
  ModelKind kind = ModelKind::cox;
  MlpParams net;
  Eigen::VectorXd v_hat;  // empty for cox kinds
  double alpha_hat = 0.0;
  std::vector<std::string> cluster_labels;
  BaselineHazard baseline;
  FitMeta meta;

  bool has_frailty() const { return kind == ModelKind::fm || kind == ModelKind::dnn_fm; }

  std::optional<int> cluster_index(const std::string& label) const {
    for (std::size_t i = 0; i < cluster_labels.size(); ++i)
      if (cluster_labels[i] == label) return static_cast<int>(i);
    return std::nullopt;
  }
};

/** Network part of the linear predictor, frailty excluded. */
inline double linear_predictor(const FittedModel& model, const Eigen::VectorXd& x) {
  return forward_scalar(model.net, x);
}

/**
 * S(t | x, cluster) = exp(-Lambda_0(t) * u * exp(eta_m)). A missing or unknown
 * cluster predicts with u = 1; with strict=true an unknown cluster throws
 * instead. `unknown_cluster` reports whether the fallback was taken.
 */
inline double predict_survival(const FittedModel& model, const Eigen::VectorXd& x,
                               const std::string* cluster, double t, bool strict = false,
                               bool* unknown_cluster = nullptr) {
  double u = 1.0;
  bool unknown = false;
  if (model.has_frailty() && cluster != nullptr) {
    auto idx = model.cluster_index(*cluster);
    if (idx)
      u = std::exp(model.v_hat[*idx]);
    else if (strict)
      throw UnknownClusterError(*cluster);
    else
      unknown = true;
  }
  if (unknown_cluster) *unknown_cluster = unknown;
  return std::exp(-model.baseline.cum_hazard(t) * u * std::exp(linear_predictor(model, x)));
}

// ---------------------------------------------------------------------------
// Cox regression by Newton iteration
// ---------------------------------------------------------------------------

struct CoxConfig {
  int max_iterations = 100;
  double tolerance = 1e-8;  // sup-norm of the score
  double coefficient_bound = 30.0;
};

namespace detail {

// Score and observed information of the Breslow partial log-likelihood for a
// linear predictor X beta, via one reverse sweep of risk-set moments.
inline void cox_score_information(const ClusteredDataset& ds, const Eigen::VectorXd& beta,
                                  double& loglik, Eigen::VectorXd& score,
                                  Eigen::MatrixXd& information) {
  const Eigen::MatrixXd& x = ds.covariates();
  const int p = static_cast<int>(x.cols());
  Eigen::VectorXd eta = x * beta;
  BreslowSweep sw = breslow_sweep(ds, eta);
  const RiskIndex& idx = ds.risk_index();

  loglik = sw.partial;
  score = Eigen::VectorXd::Zero(p);
  information = Eigen::MatrixXd::Zero(p, p);
  for (int r : idx.order)
    if (ds.status(r) == 1) score += x.row(r).transpose();

  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  int pos = static_cast<int>(idx.order.size());
  for (int k = idx.num_event_times() - 1; k >= 0; --k) {
    while (pos > idx.risk_begin[k]) {
      --pos;
      const int r = idx.order[pos];
      const double w = std::exp(eta[r] - sw.center);
      s0 += w;
      s1 += w * x.row(r).transpose();
      s2 += w * x.row(r).transpose() * x.row(r);
    }
    const double d = idx.multiplicities[k];
    const double denom = std::max(s0, 1e-100);
    Eigen::VectorXd mean = s1 / denom;
    score -= d * mean;
    information += d * (s2 / denom - mean * mean.transpose());
  }
}

}  // namespace detail

/** Cox proportional hazards fit; throws NoEventsError on event-free data. */
inline FittedModel fit_cox(const ClusteredDataset& ds, const CoxConfig& cfg = {}) {
  if (ds.num_events() == 0) throw NoEventsError();
  const int p = ds.num_covariates();

  // Constant columns carry no information; freeze their coefficients at zero
  // instead of letting rounding noise leak through the ridge.
  std::vector<bool> active(p);
  for (int j = 0; j < p; ++j)
    active[j] = ds.covariates().col(j).maxCoeff() > ds.covariates().col(j).minCoeff();
  auto deflate = [&](Eigen::VectorXd& score, Eigen::MatrixXd& info) {
    for (int j = 0; j < p; ++j) {
      if (active[j]) continue;
      score[j] = 0.0;
      info.row(j).setZero();
      info.col(j).setZero();
      info(j, j) = 1.0;
    }
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double loglik = 0.0;
  Eigen::VectorXd score(p);
  Eigen::MatrixXd info(p, p);
  detail::cox_score_information(ds, beta, loglik, score, info);
  deflate(score, info);

  FitMeta meta;
  meta.converged = false;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (score.lpNorm<Eigen::Infinity>() < cfg.tolerance) {
      meta.converged = true;
      break;
    }
    // Tiny ridge keeps directions with zero curvature (constant covariates) fixed.
    Eigen::MatrixXd h = info;
    h.diagonal().array() += 1e-12 * (1.0 + info.trace());
    Eigen::VectorXd step = h.ldlt().solve(score);
    double scale = 1.0;
    Eigen::VectorXd beta_next;
    double loglik_next = 0.0;
    Eigen::VectorXd score_next(p);
    Eigen::MatrixXd info_next(p, p);
    for (int half = 0; half < 30; ++half) {
      beta_next = beta + scale * step;
      detail::cox_score_information(ds, beta_next, loglik_next, score_next, info_next);
      deflate(score_next, info_next);
      if (std::isfinite(loglik_next) && loglik_next >= loglik - 1e-12) break;
      scale *= 0.5;
    }
    beta = beta_next;
    loglik = loglik_next;
    score = score_next;
    info = info_next;
    meta.epochs = it + 1;
    if (beta.lpNorm<Eigen::Infinity>() > cfg.coefficient_bound) {
      meta.message = "separation suspected: coefficient norm exploded";
      break;
    }
  }
  if (!meta.converged && meta.message.empty())
    meta.message = "score tolerance not reached in " + std::to_string(cfg.max_iterations) +
                   " iterations";
  meta.final_train_loss = -loglik;

  FittedModel model;
  model.kind = ModelKind::cox;
  model.net.arch = MlpArchitecture{p, {}, Activation::relu};
  model.net.output_weights = beta;
  model.cluster_labels = ds.cluster_labels();
  model.baseline = estimate_baseline(ds, ds.covariates() * beta);
  model.meta = meta;
  return model;
}

}  // namespace frailnet
