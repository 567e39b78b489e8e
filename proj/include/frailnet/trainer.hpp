#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "frailnet/dataset.hpp"
#include "frailnet/errors.hpp"
#include "frailnet/likelihood.hpp"
#include "frailnet/model.hpp"
#include "frailnet/nn.hpp"
#include "frailnet/optimize.hpp"
#include "frailnet/rng.hpp"

namespace frailnet {

struct TrainConfig {
  std::vector<int> hidden = {10, 10, 10};
  Activation activation = Activation::relu;
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  int max_inner_epochs = 1000;
  int patience = 10;         // epochs without validation improvement
  int batch_size = 0;        // records sampled per cluster per step; 0 trains full batch
  int max_outer_iterations = 20;
  double outer_tolerance = 1e-3;  // |alpha change| declaring the outer loop converged
  double alpha_lower = 1e-6;
  double alpha_upper = 100.0;
  double alpha_tolerance = 1e-8;  // Brent tolerance on log(alpha)
  double initial_alpha = 1.0;
  std::uint64_t seed = 0;
};

/** Per-epoch history; `adjustment` is NaN except on rows closing an outer iteration. */
struct TrainTrace {
  std::vector<int> epoch;
  std::vector<int> outer;
  std::vector<double> alpha;
  std::vector<double> train_loss;
  std::vector<double> val_loss;  // NaN without a validation split
  std::vector<double> adjustment;

  void add(int ep, int out, double a, double tr, double va) {
    epoch.push_back(ep);
    outer.push_back(out);
    alpha.push_back(a);
    train_loss.push_back(tr);
    val_loss.push_back(va);
    adjustment.push_back(std::numeric_limits<double>::quiet_NaN());
  }
};

struct FitResult {
  FittedModel model;
  TrainTrace trace;
};

// ---------------------------------------------------------------------------
// Outer-loop building blocks
// ---------------------------------------------------------------------------

/** Rescale so the implied frailties average one: v -= log(mean(exp(v))). Returns the shift. */
inline double adjust_frailties(const ClusteredDataset& ds, Eigen::VectorXd& v) {
  if (v.size() == 0) return 0.0;
  double acc = 0.0;
  for (int i : ds.canonical_cluster_order()) acc += std::exp(v[i]);
  const double shift = std::log(acc / static_cast<double>(v.size()));
  v.array() -= shift;
  return shift;
}

struct AlphaStep {
  double alpha = 1.0;
  bool at_boundary = false;
};

/**
 * Minimize the alpha-dependent part of -profiled_hlik (gamma terms plus
 * corrections; the partial term is alpha-free) over log alpha.
 */
inline AlphaStep outer_alpha_step(const ClusteredDataset& ds, const Eigen::VectorXd& v,
                                  const TrainConfig& cfg) {
  FrailtyState fs{v, 1.0};
  auto objective = [&](double log_alpha) {
    fs.alpha = std::exp(log_alpha);
    return -(detail::gamma_term_sum(ds, fs) + detail::correction_sum(ds, fs.alpha));
  };
  const double lo = std::log(cfg.alpha_lower);
  const double hi = std::log(cfg.alpha_upper);
  BrentResult res = brent_minimize(objective, lo, hi, cfg.alpha_tolerance);
  AlphaStep out;
  out.alpha = std::exp(res.x);
  const double margin = 1e-4 * (hi - lo);
  out.at_boundary = (res.x - lo < margin) || (hi - res.x < margin);
  return out;
}

namespace detail {

// Validation loss mirrors the training objective: partial term on the
// validation split's own risk sets, gamma terms at the current (v, alpha), and
// the profiling correction evaluated at the training split's event counts.
inline double held_out_loss(const ClusteredDataset& val, const Eigen::VectorXd& eta_val,
                            const FrailtyState* fs, const ClusteredDataset& train) {
  double ll = breslow_loglik(val, eta_val);
  if (fs) ll += gamma_term_sum(val, *fs) + correction_sum(train, fs->alpha);
  return -ll;
}

inline Eigen::VectorXd eta_with_frailty(const ClusteredDataset& ds, const Eigen::VectorXd& eta_m,
                                        const Eigen::VectorXd* v) {
  if (!v) return eta_m;
  Eigen::VectorXd eta = eta_m;
  for (int r = 0; r < ds.num_records(); ++r) eta[r] += (*v)[ds.cluster(r)];
  return eta;
}

/**
 * Classical fixed point for the frailty mode at fixed alpha: re-estimate the
 * baseline at eta_m + v, refresh the cluster cumulative hazards, replace v by
 * the log of the closed-form predictor, repeat until stable. The gradient
 * phase alone leaves v short of its mode whenever early stopping bites, and an
 * alpha update computed from an under-dispersed v collapses the outer loop
 * toward zero; polishing v first removes that failure mode.
 */
inline void profile_frailties(const ClusteredDataset& ds, const Eigen::VectorXd& eta_m,
                              double alpha, Eigen::VectorXd& v) {
  Eigen::VectorXd events(ds.num_clusters());
  for (int i = 0; i < ds.num_clusters(); ++i)
    events[i] = static_cast<double>(ds.cluster_event_counts()[i]);
  for (int iter = 0; iter < 200; ++iter) {
    BaselineHazard baseline = estimate_baseline(ds, eta_with_frailty(ds, eta_m, &v));
    Eigen::VectorXd u = frailty_bup(events, cluster_cum_hazard(ds, eta_m, baseline), alpha);
    double worst = 0.0;
    for (int i = 0; i < v.size(); ++i) {
      const double next = std::log(u[i]);
      worst = std::max(worst, std::abs(next - v[i]));
      v[i] = next;
    }
    if (worst < 1e-9) break;
  }
}

struct InnerResult {
  int epochs = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
};

/**
 * Gradient phase of one outer iteration: AdamW on (net, v) at fixed alpha,
 * early-stopped on the validation loss when a validation split is present.
 * Restores the best-validation iterate before returning. v == nullptr trains
 * the plain partial-likelihood objective.
 */
inline InnerResult run_inner_loop(const ClusteredDataset& train, const ClusteredDataset* val,
                                  MlpParams& params, Eigen::VectorXd* v, double alpha,
                                  const TrainConfig& cfg, Rng& batch_rng, int outer_index,
                                  int epoch_offset, TrainTrace& trace) {
  const int net_dim = flat_size(params.arch);
  const int v_dim = v ? static_cast<int>(v->size()) : 0;
  Eigen::VectorXd theta(net_dim + v_dim);
  pack_params(params, theta.head(net_dim));
  if (v) theta.tail(v_dim) = *v;
  Eigen::ArrayXd mask = Eigen::ArrayXd::Zero(net_dim + v_dim);
  mask.head(net_dim) = decay_mask(params.arch);

  AdamW opt(net_dim + v_dim,
            AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  FrailtyState fs;
  fs.alpha = alpha;

  auto unpack = [&]() {
    unpack_params(theta.head(net_dim), params);
    if (v) *v = theta.tail(v_dim);
  };
  auto train_objective = [&]() {
    ForwardTape tape = forward(params, train.covariates());
    Eigen::VectorXd eta = eta_with_frailty(train, tape.eta, v);
    if (v) {
      fs.v = *v;
      return -profiled_hlik(train, eta, fs).total;
    }
    return -breslow_loglik(train, eta);
  };
  auto val_objective = [&]() {
    ForwardTape tape = forward(params, val->covariates());
    Eigen::VectorXd eta = eta_with_frailty(*val, tape.eta, v);
    if (v) {
      fs.v = *v;
      return held_out_loss(*val, eta, &fs, train);
    }
    return held_out_loss(*val, eta, nullptr, train);
  };

  double best_val = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_theta = theta;
  int stall = 0;
  InnerResult out;

  for (int epoch = 0; epoch < cfg.max_inner_epochs; ++epoch) {
    double train_loss;
    Eigen::VectorXd grad(net_dim + v_dim);
    if (cfg.batch_size <= 0) {
      ForwardTape tape = forward(params, train.covariates());
      Eigen::VectorXd eta = eta_with_frailty(train, tape.eta, v);
      Eigen::VectorXd upstream;
      if (v) {
        fs.v = *v;
        LossBreakdown lb = profiled_hlik(train, eta, fs);
        train_loss = -lb.total;
        HlikGradient g = grad_profiled_hlik(train, eta, fs);
        upstream = -g.d_eta;
        grad.tail(v_dim) = -g.d_v;
      } else {
        train_loss = -breslow_loglik(train, eta);
        upstream = -breslow_grad_eta(train, eta);
      }
      if (!std::isfinite(train_loss)) throw NonFiniteLossError(epoch_offset + epoch);
      MlpGradients ng = backward(params, tape, upstream);
      pack_gradients(ng, grad.head(net_dim));
      opt.step(theta, grad, mask);
      unpack();
    } else {
      // Within-cluster batches of event records; alpha stays fixed here.
      for (int i : train.canonical_cluster_order()) {
        const auto& recs = train.cluster_records(i);
        if (recs.empty()) continue;
        const int take = std::min<int>(cfg.batch_size, static_cast<int>(recs.size()));
        std::vector<int> pool = recs;
        std::vector<int> chosen(take);
        for (int j = 0; j < take; ++j) {
          const int m = static_cast<int>(pool.size()) - j;
          const int pick = j + static_cast<int>(batch_rng.next_u64() % static_cast<std::uint64_t>(m));
          std::swap(pool[j], pool[pick]);
          chosen[j] = pool[j];
        }
        MiniBatch batch = make_minibatch(train, chosen);
        Eigen::MatrixXd xb(take, train.num_covariates());
        for (int j = 0; j < take; ++j) xb.row(j) = train.covariates().row(chosen[j]);
        ForwardTape tape = forward(params, xb);
        Eigen::VectorXd eta = tape.eta;
        if (v)
          for (int j = 0; j < take; ++j) eta[j] += (*v)[batch.cluster[j]];
        fs.v = v ? *v : Eigen::VectorXd::Zero(train.num_clusters());
        MiniBatchScores sc = minibatch_scores(batch, eta, fs);
        if (!sc.d_eta.allFinite()) throw NonFiniteLossError(epoch_offset + epoch);
        MlpGradients ng = backward(params, tape, -sc.d_eta);
        pack_gradients(ng, grad.head(net_dim));
        if (v) grad.tail(v_dim) = -sc.d_v;
        opt.step(theta, grad, mask);
        unpack();
      }
      train_loss = train_objective();
      if (!std::isfinite(train_loss)) throw NonFiniteLossError(epoch_offset + epoch);
    }

    out.epochs = epoch + 1;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    if (val) {
      val_loss = val_objective();
      if (!std::isfinite(val_loss)) throw NonFiniteLossError(epoch_offset + epoch);
      if (val_loss < best_val) {
        best_val = val_loss;
        best_theta = theta;
        stall = 0;
      } else if (++stall > cfg.patience) {
        trace.add(epoch_offset + epoch, outer_index, alpha, train_loss, val_loss);
        break;
      }
    }
    trace.add(epoch_offset + epoch, outer_index, alpha, train_loss, val_loss);
  }

  if (val && best_val < std::numeric_limits<double>::infinity()) {
    theta = best_theta;
    unpack();
  }
  if (v) profile_frailties(train, forward(params, train.covariates()).eta, alpha, *v);
  out.train_loss = train_objective();
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Full fitting procedures
// ---------------------------------------------------------------------------

/**
 * Frailty fit: alternate the gradient phase over (net, v) at fixed alpha, the
 * mean-one frailty adjustment, and the 1-D alpha update, until the alpha change
 * drops below the outer tolerance.
 *
 * Both splits are re-stored in canonical record order first. Likelihood sweeps
 * already reduce canonically, but network gradients sum over matrix rows, so
 * without the reordering the result would depend on record arrival order.
 */
inline FitResult fit_dnn_fm(const ClusteredDataset& train_in, const ClusteredDataset* val_in,
                            TrainConfig cfg, ModelKind kind = ModelKind::dnn_fm,
                            TrainTrace* external_trace = nullptr) {
  if (train_in.num_events() == 0) throw NoEventsError();
  const ClusteredDataset train = train_in.subset(train_in.canonical_order());
  std::optional<ClusteredDataset> val_store;
  if (val_in) val_store = val_in->subset(val_in->canonical_order());
  const ClusteredDataset* val = val_store ? &*val_store : nullptr;
  FitResult res;
  TrainTrace& trace = external_trace ? *external_trace : res.trace;

  MlpArchitecture arch{train.num_covariates(), cfg.hidden, cfg.activation};
  Rng init_rng = Rng::stream(cfg.seed, {0});
  MlpParams params = init_params(arch, init_rng);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(train.num_clusters());
  double alpha = cfg.initial_alpha;

  FitMeta meta;
  meta.seed = cfg.seed;
  meta.converged = false;
  bool monotone = true;
  double prev_outer_loss = std::numeric_limits<double>::infinity();
  AlphaStep step;

  for (int outer = 0; outer < cfg.max_outer_iterations; ++outer) {
    Rng batch_rng = Rng::stream(cfg.seed, {1, static_cast<std::uint64_t>(outer)});
    detail::InnerResult inner = detail::run_inner_loop(train, val, params, &v, alpha, cfg,
                                                       batch_rng, outer, meta.epochs, trace);
    meta.epochs += inner.epochs;
    meta.outer_iterations = outer + 1;
    const double shift = adjust_frailties(train, v);
    if (!trace.adjustment.empty()) trace.adjustment.back() = shift;
    step = outer_alpha_step(train, v, cfg);
    meta.alpha_trace.push_back(step.alpha);

    FrailtyState fs{v, step.alpha};
    ForwardTape tape = forward(params, train.covariates());
    const double outer_loss =
        -profiled_hlik(train, detail::eta_with_frailty(train, tape.eta, &v), fs).total;
    if (outer_loss > prev_outer_loss + 1e-8) monotone = false;
    prev_outer_loss = outer_loss;
    meta.final_train_loss = outer_loss;

    const double change = std::abs(step.alpha - alpha);
    alpha = step.alpha;
    if (change < cfg.outer_tolerance) {
      meta.converged = true;
      break;
    }
  }
  meta.alpha_at_boundary = step.at_boundary;
  if (!monotone) meta.message = "outer loss increased at least once";
  if (!meta.converged && meta.message.empty())
    meta.message = "alpha did not settle in " + std::to_string(cfg.max_outer_iterations) +
                   " outer iterations";

  FittedModel& model = res.model;
  model.kind = kind;
  model.net = params;
  ForwardTape tape = forward(params, train.covariates());
  detail::profile_frailties(train, tape.eta, alpha, v);
  model.v_hat = v;
  model.alpha_hat = alpha;
  model.cluster_labels = train.cluster_labels();
  model.baseline = estimate_baseline(train, detail::eta_with_frailty(train, tape.eta, &v));
  model.meta = meta;
  return res;
}

/** Plain partial-likelihood network fit: one gradient phase, no frailty terms. */
inline FitResult fit_dnn_cox(const ClusteredDataset& train_in, const ClusteredDataset* val_in,
                             TrainConfig cfg, ModelKind kind = ModelKind::dnn_cox,
                             TrainTrace* external_trace = nullptr) {
  if (train_in.num_events() == 0) throw NoEventsError();
  const ClusteredDataset train = train_in.subset(train_in.canonical_order());
  std::optional<ClusteredDataset> val_store;
  if (val_in) val_store = val_in->subset(val_in->canonical_order());
  const ClusteredDataset* val = val_store ? &*val_store : nullptr;
  FitResult res;
  TrainTrace& trace = external_trace ? *external_trace : res.trace;

  MlpArchitecture arch{train.num_covariates(), cfg.hidden, cfg.activation};
  Rng init_rng = Rng::stream(cfg.seed, {0});
  MlpParams params = init_params(arch, init_rng);
  Rng batch_rng = Rng::stream(cfg.seed, {1, 0});
  FitMeta meta;
  meta.seed = cfg.seed;
  detail::InnerResult inner =
      detail::run_inner_loop(train, val, params, nullptr, 1.0, cfg, batch_rng, 0, 0, trace);
  meta.epochs = inner.epochs;
  meta.final_train_loss = inner.train_loss;

  FittedModel& model = res.model;
  model.kind = kind;
  model.net = params;
  model.alpha_hat = 0.0;
  model.cluster_labels = train.cluster_labels();
  model.baseline = estimate_baseline(train, forward(params, train.covariates()).eta);
  model.meta = meta;
  return res;
}

/** Gamma-frailty model with a linear predictor: the degenerate zero-hidden-layer fit. */
inline FitResult fit_fm(const ClusteredDataset& train, const ClusteredDataset* val,
                        TrainConfig cfg, TrainTrace* external_trace = nullptr) {
  cfg.hidden.clear();
  return fit_dnn_fm(train, val, cfg, ModelKind::fm, external_trace);
}

inline FitResult fit_model(ModelKind kind, const ClusteredDataset& train,
                           const ClusteredDataset* val, const TrainConfig& cfg,
                           TrainTrace* external_trace = nullptr) {
  switch (kind) {
    case ModelKind::cox: {
      FitResult res;
      res.model = fit_cox(train);
      res.model.meta.seed = cfg.seed;
      return res;
    }
    case ModelKind::dnn_cox:
      return fit_dnn_cox(train, val, cfg, ModelKind::dnn_cox, external_trace);
    case ModelKind::fm:
      return fit_fm(train, val, cfg, external_trace);
    default:
      return fit_dnn_fm(train, val, cfg, ModelKind::dnn_fm, external_trace);
  }
}

}  // namespace frailnet
