#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "frailnet/dataset.hpp"
#include "frailnet/errors.hpp"
#include "frailnet/model.hpp"

namespace frailnet {

/**
 * Reverse Kaplan-Meier estimate of the censoring survival function G. At tied
 * observed times, survival events leave the risk set just before the censoring
 * mass is evaluated.
 */
class CensoringKm {
 public:
  static CensoringKm fit(const ClusteredDataset& ds) {
    CensoringKm km;
    const std::vector<int>& order = ds.canonical_order();
    const int n = static_cast<int>(order.size());
    double g = 1.0;
    int pos = 0;
    while (pos < n) {
      const double t = ds.time(order[pos]);
      int end = pos;
      int events = 0, censorings = 0;
      while (end < n && ds.time(order[end]) == t) {
        if (ds.status(order[end]) == 1) ++events; else ++censorings;
        ++end;
      }
      if (censorings > 0) {
        const int at_risk = n - pos - events;
        g *= (at_risk > 0) ? 1.0 - static_cast<double>(censorings) / at_risk : 0.0;
        km.times_.push_back(t);
        km.survival_.push_back(g);
      }
      pos = end;
    }
    return km;
  }

  /** Right-continuous step function; 1 before the first censoring time. */
  double at(double t) const {
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return 1.0;
    return survival_[static_cast<std::size_t>(it - times_.begin()) - 1];
  }

  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return survival_; }

 private:
  std::vector<double> times_;
  std::vector<double> survival_;
};

/**
 * Inverse-censoring-weighted Brier score at time t. `survival_at_t[r]` is the
 * model's S(t | x_r, cluster_r). Records whose weight denominator is zero
 * contribute nothing.
 */
inline double brier_score(const ClusteredDataset& ds, const CensoringKm& km,
                          const Eigen::VectorXd& survival_at_t, double t) {
  if (survival_at_t.size() != ds.num_records())
    throw ShapeMismatchError("brier_score: prediction size mismatch");
  double acc = 0.0;
  for (int r : ds.canonical_order()) {
    const double y = ds.time(r);
    const double s = survival_at_t[r];
    if (y > t) {
      const double g = km.at(t);
      if (g > 0.0) acc += (1.0 - s) * (1.0 - s) / g;
    } else if (ds.status(r) == 1) {
      const double g = km.at(y);
      if (g > 0.0) acc += s * s / g;
    }
  }
  return acc / ds.num_records();
}

/** Equally spaced grid over [0, t_max]. */
inline std::vector<double> make_time_grid(double t_max, int points = 100) {
  if (!(t_max > 0.0) || points < 2) throw InvalidArgumentError("make_time_grid: bad arguments");
  std::vector<double> grid(points);
  for (int g = 0; g < points; ++g) grid[g] = t_max * g / (points - 1);
  return grid;
}

/** Trapezoid integral of the score curve, normalized by the grid span. */
inline double integrated_brier(const std::vector<double>& grid, const std::vector<double>& values) {
  if (grid.size() != values.size()) throw ShapeMismatchError("integrated_brier: size mismatch");
  if (grid.size() < 64) throw InvalidArgumentError("integrated_brier: grid needs >= 64 points");
  double acc = 0.0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (grid[g] <= grid[g - 1])
      throw InvalidArgumentError("integrated_brier: grid must be strictly increasing");
    acc += 0.5 * (values[g] + values[g - 1]) * (grid[g] - grid[g - 1]);
  }
  return acc / (grid.back() - grid.front());
}

// ---------------------------------------------------------------------------
// Concordance
// ---------------------------------------------------------------------------

namespace detail {

struct PairTally {
  double concordant = 0.0;  // ties in score count one half
  long comparable = 0;

  void add(double score_early, double score_late) {
    ++comparable;
    if (score_early > score_late)
      concordant += 1.0;
    else if (score_early == score_late)
      concordant += 0.5;
  }

  double index() const { return concordant / comparable; }
};

// (a, b) is comparable when a's event is observed strictly before b's time.
inline bool comparable_pair(double ya, int da, double yb) { return da == 1 && ya < yb; }

}  // namespace detail

/** Harrell concordance of risk scores: higher score should fail earlier. */
inline double c_harrell(const Eigen::VectorXd& times, const Eigen::VectorXi& status,
                        const Eigen::VectorXd& scores) {
  const int n = static_cast<int>(times.size());
  if (status.size() != n || scores.size() != n)
    throw ShapeMismatchError("c_harrell: size mismatch");
  detail::PairTally tally;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      if (a == b) continue;
      if (detail::comparable_pair(times[a], status[a], times[b])) tally.add(scores[a], scores[b]);
    }
  if (tally.comparable == 0) throw NoComparablePairsError();
  return tally.index();
}

struct ClusteredConcordance {
  double c_within = std::numeric_limits<double>::quiet_NaN();
  double c_between = std::numeric_limits<double>::quiet_NaN();
  double c_overall = std::numeric_limits<double>::quiet_NaN();
  long pairs_within = 0;   // comparable pairs inside clusters
  long pairs_between = 0;  // comparable pairs across clusters
  int clusters_scored = 0; // clusters contributing to the within average
};

/**
 * Within / between / overall concordance for clustered data. Within-cluster
 * pairs are ranked by the frailty-free scores (a shared frailty cannot reorder
 * them); between-cluster pairs use the full scores including frailty. The
 * overall index is the pair-count-weighted combination of the two.
 */
inline ClusteredConcordance c_clustered(const ClusteredDataset& ds, const Eigen::VectorXd& scores_m,
                                        const Eigen::VectorXd& scores_full) {
  const int n = ds.num_records();
  if (scores_m.size() != n || scores_full.size() != n)
    throw ShapeMismatchError("c_clustered: size mismatch");

  ClusteredConcordance out;
  double within_sum = 0.0;
  for (int i : ds.canonical_cluster_order()) {
    const auto& recs = ds.cluster_records(i);
    detail::PairTally tally;
    for (int a : recs)
      for (int b : recs) {
        if (a == b) continue;
        if (detail::comparable_pair(ds.time(a), ds.status(a), ds.time(b)))
          tally.add(scores_m[a], scores_m[b]);
      }
    if (tally.comparable > 0) {
      within_sum += tally.index();
      out.pairs_within += tally.comparable;
      ++out.clusters_scored;
    }
  }
  if (out.clusters_scored > 0) out.c_within = within_sum / out.clusters_scored;

  detail::PairTally between;
  for (int a : ds.canonical_order())
    for (int b : ds.canonical_order()) {
      if (ds.cluster(a) == ds.cluster(b)) continue;
      if (detail::comparable_pair(ds.time(a), ds.status(a), ds.time(b)))
        between.add(scores_full[a], scores_full[b]);
    }
  out.pairs_between = between.comparable;
  if (between.comparable > 0) out.c_between = between.index();

  const long total = out.pairs_within + out.pairs_between;
  if (total > 0) {
    double acc = 0.0;
    if (out.pairs_within > 0) acc += out.pairs_within * out.c_within;
    if (out.pairs_between > 0) acc += out.pairs_between * out.c_between;
    out.c_overall = acc / total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full evaluation of a fitted model
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string model_kind;
  int num_records = 0;
  int unknown_clusters = 0;  // records predicted with u = 1 fallback
  double ibs = std::numeric_limits<double>::quiet_NaN();
  double c_harrell = std::numeric_limits<double>::quiet_NaN();
  double c_within = std::numeric_limits<double>::quiet_NaN();
  double c_between = std::numeric_limits<double>::quiet_NaN();
  double c_overall = std::numeric_limits<double>::quiet_NaN();
  long pairs_within = 0;
  long pairs_between = 0;
  std::vector<double> grid;
  std::vector<double> brier;
};

/** IPCW Brier curve, integrated score, and all concordance indices on one split. */
inline EvalReport evaluate_model(const ClusteredDataset& ds, const FittedModel& model,
                                 int grid_points = 100) {
  EvalReport rep;
  rep.model_kind = model_kind_name(model.kind);
  rep.num_records = ds.num_records();

  Eigen::VectorXd eta_m = forward(model.net, ds.covariates()).eta;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(ds.num_records());
  if (model.has_frailty()) {
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < model.cluster_labels.size(); ++i)
      index.emplace(model.cluster_labels[i], static_cast<int>(i));
    for (int r = 0; r < ds.num_records(); ++r) {
      auto it = index.find(ds.cluster_labels()[ds.cluster(r)]);
      if (it == index.end())
        ++rep.unknown_clusters;
      else
        v[r] = model.v_hat[it->second];
    }
  }
  Eigen::VectorXd eta_full = eta_m + v;
  Eigen::VectorXd risk = (eta_full.array()).exp();  // u * exp(eta_m)

  CensoringKm km = CensoringKm::fit(ds);
  const double t_max = ds.times().maxCoeff();
  rep.grid = make_time_grid(t_max, grid_points);
  rep.brier.reserve(rep.grid.size());
  Eigen::VectorXd surv(ds.num_records());
  for (double t : rep.grid) {
    const double lambda0 = model.baseline.cum_hazard(t);
    surv = (-lambda0 * risk.array()).exp();
    rep.brier.push_back(brier_score(ds, km, surv, t));
  }
  rep.ibs = integrated_brier(rep.grid, rep.brier);

  rep.c_harrell = c_harrell(ds.times(), ds.statuses(), eta_full);
  ClusteredConcordance cc = c_clustered(ds, eta_m, eta_full);
  rep.c_within = cc.c_within;
  rep.c_between = cc.c_between;
  rep.c_overall = cc.c_overall;
  rep.pairs_within = cc.pairs_within;
  rep.pairs_between = cc.pairs_between;
  return rep;
}

}  // namespace frailnet
