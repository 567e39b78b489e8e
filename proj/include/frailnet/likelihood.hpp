#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "frailnet/dataset.hpp"
#include "frailnet/errors.hpp"
#include "frailnet/special.hpp"

namespace frailnet {

/** Cluster log-frailties and the gamma variance parameter. */
struct FrailtyState {
  Eigen::VectorXd v;
  double alpha = 1.0;
};

namespace detail {

// Shared Breslow kernel. Risk sums are accumulated over the canonical suffix
// order, centered by the global max of eta so a constant shift in eta cancels
// exactly (sum of event multiplicities equals the number of events).
struct BreslowSweep {
  double center = 0.0;
  Eigen::VectorXd risk_sums;  // K, in units of exp(eta - center)
  double partial = 0.0;
};

inline BreslowSweep breslow_sweep(const ClusteredDataset& ds, const Eigen::VectorXd& eta) {
  if (eta.size() != ds.num_records())
    throw ShapeMismatchError("eta has " + std::to_string(eta.size()) + " entries, dataset has " +
                             std::to_string(ds.num_records()) + " records");
  const RiskIndex& idx = ds.risk_index();
  const int k_total = idx.num_event_times();
  BreslowSweep sw;
  sw.risk_sums.resize(k_total);
  if (ds.num_records() == 0) return sw;
  sw.center = eta.maxCoeff();

  double running = 0.0;
  int pos = static_cast<int>(idx.order.size());
  for (int k = k_total - 1; k >= 0; --k) {
    while (pos > idx.risk_begin[k]) {
      --pos;
      running += std::exp(eta[idx.order[pos]] - sw.center);
    }
    sw.risk_sums[k] = running;
  }

  double events = 0.0;
  for (int r : idx.order)
    if (ds.status(r) == 1) events += eta[r] - sw.center;
  double tie_terms = 0.0;
  for (int k = 0; k < k_total; ++k)
    tie_terms += idx.multiplicities[k] * std::log(std::max(sw.risk_sums[k], 1e-100));
  sw.partial = events - tie_terms;
  return sw;
}

}  // namespace detail

/** Breslow partial log-likelihood of the linear predictor eta. */
inline double breslow_loglik(const ClusteredDataset& ds, const Eigen::VectorXd& eta) {
  return detail::breslow_sweep(ds, eta).partial;
}

/** d(partial)/d(eta): status minus the record's share of each risk sum it enters. */
inline Eigen::VectorXd breslow_grad_eta(const ClusteredDataset& ds, const Eigen::VectorXd& eta) {
  detail::BreslowSweep sw = detail::breslow_sweep(ds, eta);
  const RiskIndex& idx = ds.risk_index();
  const int k_total = idx.num_event_times();
  Eigen::VectorXd cum_inverse(k_total);
  double acc = 0.0;
  for (int k = 0; k < k_total; ++k) {
    acc += idx.multiplicities[k] / std::max(sw.risk_sums[k], 1e-100);
    cum_inverse[k] = acc;
  }
  Eigen::VectorXd g(ds.num_records());
  for (int r = 0; r < ds.num_records(); ++r) {
    int k = idx.events_at_or_before[r];
    double share = (k > 0) ? std::exp(eta[r] - sw.center) * cum_inverse[k - 1] : 0.0;
    g[r] = ds.status(r) - share;
  }
  return g;
}

/**
 * Profiling correction for one cluster:
 * a(alpha, d) = (d + 1/alpha) * (log(d + 1/alpha) - 1) - logGamma(d + 1/alpha).
 */
inline double a_correction(double alpha, double d_plus) {
  if (!(alpha > 0.0)) throw NonPositiveAlphaError(alpha);
  if (d_plus < 0.0) throw InvalidArgumentError("event count must be nonnegative");
  const double x = d_plus + 1.0 / alpha;
  return x * (std::log(x) - 1.0) - log_gamma(x);
}

/** Loss pieces; total = partial_term + gamma_term + correction_term. */
struct LossBreakdown {
  double partial_term = 0.0;
  double gamma_term = 0.0;
  double correction_term = 0.0;
  double total = 0.0;
};

namespace detail {

inline void check_frailty(const ClusteredDataset& ds, const FrailtyState& frailty) {
  if (!(frailty.alpha > 0.0)) throw NonPositiveAlphaError(frailty.alpha);
  if (frailty.v.size() < ds.num_clusters())
    throw ShapeMismatchError("frailty vector has " + std::to_string(frailty.v.size()) +
                             " entries, dataset encodes " + std::to_string(ds.num_clusters()) +
                             " clusters");
}

// Gamma log-density terms summed over all clusters in canonical order.
inline double gamma_term_sum(const ClusteredDataset& ds, const FrailtyState& frailty) {
  const double alpha = frailty.alpha;
  const double shared = -std::log(alpha) / alpha - log_gamma(1.0 / alpha);
  double acc = 0.0;
  for (int i : ds.canonical_cluster_order())
    acc += (frailty.v[i] - std::exp(frailty.v[i])) / alpha + shared;
  return acc;
}

inline double correction_sum(const ClusteredDataset& ds, double alpha) {
  double acc = 0.0;
  for (int i : ds.canonical_cluster_order())
    acc -= a_correction(alpha, static_cast<double>(ds.cluster_event_counts()[i]));
  return acc;
}

}  // namespace detail

/**
 * Profiled h-likelihood: Breslow partial term of eta, plus the gamma frailty
 * terms, minus the per-cluster profiling corrections. eta must already include
 * the frailty offsets v[cluster].
 */
inline LossBreakdown profiled_hlik(const ClusteredDataset& ds, const Eigen::VectorXd& eta,
                                   const FrailtyState& frailty) {
  detail::check_frailty(ds, frailty);
  LossBreakdown out;
  out.partial_term = breslow_loglik(ds, eta);
  out.gamma_term = detail::gamma_term_sum(ds, frailty);
  out.correction_term = detail::correction_sum(ds, frailty.alpha);
  out.total = out.partial_term + out.gamma_term + out.correction_term;
  return out;
}

/**
 * Corrected h-likelihood with an explicit baseline hazard: per-record event
 * and cumulative-hazard terms, the gamma frailty terms, and the per-cluster
 * profiling corrections. The baseline supplies log_hazard(t) and
 * cum_hazard(t). Evaluated at the predicted frailties this equals the
 * cluster-marginal log-likelihood of the same baseline exactly; the
 * correction does not depend on v, so maximizing over the frailties is
 * unaffected by it.
 */
template <class Baseline>
double full_hlik(const ClusteredDataset& ds, const Eigen::VectorXd& eta,
                 const FrailtyState& frailty, const Baseline& baseline) {
  detail::check_frailty(ds, frailty);
  if (eta.size() != ds.num_records()) throw ShapeMismatchError("full_hlik: eta size mismatch");
  double acc = 0.0;
  for (int r : ds.canonical_order()) {
    if (ds.status(r) == 1) acc += baseline.log_hazard(ds.time(r)) + eta[r];
    acc -= baseline.cum_hazard(ds.time(r)) * std::exp(eta[r]);
  }
  return acc + detail::gamma_term_sum(ds, frailty) + detail::correction_sum(ds, frailty.alpha);
}

struct HlikGradient {
  Eigen::VectorXd d_eta;  // per record
  Eigen::VectorXd d_v;    // per cluster, chain through eta included
  double d_alpha = 0.0;
};

/** Analytic gradient of profiled_hlik in (eta, v, alpha). */
inline HlikGradient grad_profiled_hlik(const ClusteredDataset& ds, const Eigen::VectorXd& eta,
                                       const FrailtyState& frailty) {
  detail::check_frailty(ds, frailty);
  const double alpha = frailty.alpha;
  HlikGradient g;
  g.d_eta = breslow_grad_eta(ds, eta);
  g.d_v = Eigen::VectorXd::Zero(frailty.v.size());
  for (int r : ds.canonical_order()) g.d_v[ds.cluster(r)] += g.d_eta[r];
  for (int i = 0; i < frailty.v.size(); ++i)
    g.d_v[i] += (1.0 - std::exp(frailty.v[i])) / alpha;

  const double shared = std::log(alpha) + digamma(1.0 / alpha);
  double acc = 0.0;
  for (int i : ds.canonical_cluster_order()) {
    const double v = frailty.v[i];
    const double x = ds.cluster_event_counts()[i] + 1.0 / alpha;
    acc += std::exp(v) - v - 1.0 + shared + std::log(x) - digamma(x);
  }
  g.d_alpha = acc / (alpha * alpha);
  return g;
}

// ---------------------------------------------------------------------------
// Within-cluster minibatch objective
// ---------------------------------------------------------------------------

/**
 * A subsample of event records. Risk sets are formed inside the batch only;
 * the frailty terms are scaled by the population cluster sizes so the batch
 * objective is an unbiased surrogate for the full one.
 */
struct MiniBatch {
  Eigen::VectorXd times;              // B
  std::vector<int> cluster;           // B, indices into FrailtyState::v
  std::vector<int> population_sizes;  // per cluster id: true n_i
};

/** Assemble a batch from dataset records; rejects censored records. */
inline MiniBatch make_minibatch(const ClusteredDataset& ds, const std::vector<int>& record_ids) {
  MiniBatch b;
  b.times.resize(static_cast<Eigen::Index>(record_ids.size()));
  b.cluster.reserve(record_ids.size());
  for (std::size_t k = 0; k < record_ids.size(); ++k) {
    int r = record_ids[k];
    if (ds.status(r) != 1) throw CensoredRecordInBatchError(r);
    b.times[static_cast<Eigen::Index>(k)] = ds.time(r);
    b.cluster.push_back(ds.cluster(r));
  }
  b.population_sizes = ds.cluster_sizes();
  return b;
}

namespace detail {

struct BatchSweep {
  std::vector<int> order;       // batch positions, time ascending
  std::vector<int> group_end;   // per sorted position: one past its tie group
  Eigen::VectorXd risk_sums;    // per sorted position, centered
  double center = 0.0;
};

inline BatchSweep batch_sweep(const MiniBatch& batch, const Eigen::VectorXd& eta) {
  const int b_size = static_cast<int>(batch.times.size());
  if (eta.size() != b_size) throw ShapeMismatchError("minibatch: eta size mismatch");
  if (b_size == 0) throw InvalidArgumentError("minibatch is empty");
  BatchSweep sw;
  sw.order.resize(b_size);
  std::iota(sw.order.begin(), sw.order.end(), 0);
  std::stable_sort(sw.order.begin(), sw.order.end(), [&](int a, int b) {
    if (batch.times[a] != batch.times[b]) return batch.times[a] < batch.times[b];
    return batch.cluster[a] < batch.cluster[b];
  });
  sw.center = eta.maxCoeff();
  sw.risk_sums.resize(b_size);
  sw.group_end.resize(b_size);
  double running = 0.0;
  int hi = b_size;
  while (hi > 0) {
    int lo = hi;
    const double t = batch.times[sw.order[hi - 1]];
    while (lo > 0 && batch.times[sw.order[lo - 1]] == t) --lo;
    for (int q = lo; q < hi; ++q) running += std::exp(eta[sw.order[q]] - sw.center);
    for (int q = lo; q < hi; ++q) {
      sw.risk_sums[q] = running;
      sw.group_end[q] = hi;
    }
    hi = lo;
  }
  return sw;
}

inline void check_batch(const MiniBatch& batch, const FrailtyState& frailty) {
  if (!(frailty.alpha > 0.0)) throw NonPositiveAlphaError(frailty.alpha);
  for (int i : batch.cluster) {
    if (i < 0 || i >= static_cast<int>(frailty.v.size()))
      throw ShapeMismatchError("batch cluster id " + std::to_string(i) + " out of range");
    if (i >= static_cast<int>(batch.population_sizes.size()) || batch.population_sizes[i] <= 0)
      throw UnknownClusterSizeError(i);
  }
}

}  // namespace detail

/**
 * Minibatch h-likelihood surrogate: batch-internal partial terms plus
 * population-size-scaled frailty and correction increments. Coincides with
 * profiled_hlik when the batch is the whole uncensored dataset.
 */
inline double minibatch_hlik(const MiniBatch& batch, const Eigen::VectorXd& eta,
                             const FrailtyState& frailty) {
  detail::check_batch(batch, frailty);
  detail::BatchSweep sw = detail::batch_sweep(batch, eta);
  const double alpha = frailty.alpha;
  double acc = 0.0;
  for (int q = 0; q < static_cast<int>(sw.order.size()); ++q) {
    const int b = sw.order[q];
    acc += eta[b] - sw.center - std::log(std::max(sw.risk_sums[q], 1e-100));
    const int i = batch.cluster[b];
    const double n_i = batch.population_sizes[i];
    const double v = frailty.v[i];
    acc += (v - std::exp(v)) / (n_i * alpha);
    acc += (-std::log(alpha) / alpha - log_gamma(1.0 / alpha) - a_correction(alpha, n_i)) / n_i;
  }
  return acc;
}

struct MiniBatchScores {
  Eigen::VectorXd d_eta;  // per batch record
  Eigen::VectorXd d_v;    // per cluster
  double d_alpha = 0.0;
};

/** Analytic gradient of minibatch_hlik in (eta, v, alpha). */
inline MiniBatchScores minibatch_scores(const MiniBatch& batch, const Eigen::VectorXd& eta,
                                        const FrailtyState& frailty) {
  detail::check_batch(batch, frailty);
  detail::BatchSweep sw = detail::batch_sweep(batch, eta);
  const int b_size = static_cast<int>(batch.times.size());
  const double alpha = frailty.alpha;

  // Prefix sums of inverse risk sums through each record's tie group.
  Eigen::VectorXd cum_inverse(b_size);
  {
    double acc = 0.0;
    int q = 0;
    while (q < b_size) {
      const int end = sw.group_end[q];
      for (int m = q; m < end; ++m) acc += 1.0 / std::max(sw.risk_sums[m], 1e-100);
      for (int m = q; m < end; ++m) cum_inverse[m] = acc;
      q = end;
    }
  }

  MiniBatchScores out;
  out.d_eta.resize(b_size);
  out.d_v = Eigen::VectorXd::Zero(frailty.v.size());
  const double shared = std::log(alpha) + digamma(1.0 / alpha);
  double d_alpha = 0.0;
  for (int q = 0; q < b_size; ++q) {
    const int b = sw.order[q];
    out.d_eta[b] = 1.0 - std::exp(eta[b] - sw.center) * cum_inverse[q];
    const int i = batch.cluster[b];
    const double n_i = batch.population_sizes[i];
    const double v = frailty.v[i];
    out.d_v[i] += out.d_eta[b] + (1.0 - std::exp(v)) / (n_i * alpha);
    const double x = n_i + 1.0 / alpha;
    d_alpha += (std::exp(v) - v - 1.0 + shared + std::log(x) - digamma(x)) / (n_i * alpha * alpha);
  }
  out.d_alpha = d_alpha;
  return out;
}

}  // namespace frailnet
