#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "frailnet/dataset.hpp"
#include "frailnet/likelihood.hpp"
#include "frailnet/trainer.hpp"

using namespace frailnet;

namespace {

SurvivalRecord rec(std::string cluster, double time, int status, std::vector<double> x) {
  return SurvivalRecord{std::move(cluster), time, status, std::move(x)};
}

// Clustered data with a linear signal and optional multiplicative frailty.
std::vector<SurvivalRecord> synthetic_records(uint64_t seed, int n_clusters, int per_cluster,
                                              double frailty_var, double censor_prob) {
  Rng rng(seed);
  std::vector<SurvivalRecord> out;
  for (int i = 0; i < n_clusters; ++i) {
    double u = frailty_var > 0.0 ? rng.gamma(1.0 / frailty_var, frailty_var) : 1.0;
    for (int j = 0; j < per_cluster; ++j) {
      double x1 = rng.normal(), x2 = rng.normal();
      double risk = u * std::exp(0.8 * x1 - 0.5 * x2);
      double t = rng.exponential(risk);
      double c = censor_prob > 0.0 ? rng.exponential(risk * censor_prob / (1.0 - censor_prob))
                                   : std::numeric_limits<double>::infinity();
      out.push_back(rec("g" + std::to_string(i), std::min(t, c) + 1e-9, t <= c ? 1 : 0, {x1, x2}));
    }
  }
  return out;
}

double recompute_val_loss_dnn_cox(const FittedModel& m, const ClusteredDataset& val,
                                  const ClusteredDataset& train) {
  ForwardTape tape = forward(m.net, val.covariates());
  return detail::held_out_loss(val, tape.eta, nullptr, train);
}

}  // namespace

TEST_CASE("frailty adjustment restores a unit mean", "[trainer]") {
  auto ds = ClusteredDataset::from_records({
      rec("A", 1.0, 1, {0.0}),
      rec("B", 2.0, 1, {0.0}),
  });
  Eigen::VectorXd v(2);
  v << std::log(2.0), std::log(2.0);
  double shift = adjust_frailties(ds, v);
  CHECK(shift == Catch::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(v[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK(v[1] == Catch::Approx(0.0).margin(1e-15));

  v << 0.0, std::log(3.0);
  shift = adjust_frailties(ds, v);
  CHECK(shift == Catch::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(0.5 * (std::exp(v[0]) + std::exp(v[1])) == Catch::Approx(1.0).epsilon(1e-14));

  Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  CHECK(adjust_frailties(ds, zero) == 0.0);
  CHECK(zero.isZero(0.0));
}

TEST_CASE("alpha update matches an independent grid-and-golden search", "[trainer]") {
  Rng rng(51);
  std::vector<SurvivalRecord> records;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 5; ++j)
      records.push_back(rec("k" + std::to_string(i), 0.3 + rng.uniform() * 3.0,
                            rng.uniform() < 0.75 ? 1 : 0, {rng.normal()}));
  auto ds = ClusteredDataset::from_records(records);
  Eigen::VectorXd v(8);
  for (int i = 0; i < 8; ++i) v[i] = 0.8 * rng.normal();

  TrainConfig cfg;
  AlphaStep step = outer_alpha_step(ds, v, cfg);

  // Independent objective built from first principles on the same quantities.
  auto neg_alpha_part = [&](double alpha) {
    double acc = 0.0;
    for (int i = 0; i < 8; ++i) {
      acc += (v[i] - std::exp(v[i])) / alpha - std::log(alpha) / alpha - std::lgamma(1.0 / alpha);
      acc -= a_correction(alpha, static_cast<double>(ds.cluster_event_counts()[i]));
    }
    return -acc;
  };
  // Coarse grid then golden-section refinement in log space.
  double best_la = std::log(cfg.alpha_lower), best_f = neg_alpha_part(cfg.alpha_lower);
  const double lo = std::log(cfg.alpha_lower), hi = std::log(cfg.alpha_upper);
  for (int k = 0; k <= 4000; ++k) {
    double la = lo + (hi - lo) * k / 4000.0;
    double f = neg_alpha_part(std::exp(la));
    if (f < best_f) {
      best_f = f;
      best_la = la;
    }
  }
  double a = std::max(lo, best_la - 0.01), b = std::min(hi, best_la + 0.01);
  const double gr = 0.6180339887498949;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = neg_alpha_part(std::exp(c)), fd = neg_alpha_part(std::exp(d));
  while (b - a > 1e-10) {
    if (fc < fd) {
      b = d; d = c; fd = fc; c = b - gr * (b - a); fc = neg_alpha_part(std::exp(c));
    } else {
      a = c; c = d; fc = fd; d = a + gr * (b - a); fd = neg_alpha_part(std::exp(d));
    }
  }
  const double oracle = std::exp(0.5 * (a + b));
  CHECK(step.alpha == Catch::Approx(oracle).epsilon(1e-4));
  CHECK_FALSE(step.at_boundary);

  // Stationarity of the analytic alpha score at the interior optimum.
  HlikGradient g = grad_profiled_hlik(ds, Eigen::VectorXd::Zero(ds.num_records()),
                                      FrailtyState{v, step.alpha});
  CHECK(std::abs(g.d_alpha) < 1e-4);
}

TEST_CASE("degenerate frailties push alpha to the lower boundary", "[trainer]") {
  // v identically 0 with positive event counts makes the alpha part strictly
  // increasing in alpha, so the minimizer must sit at the lower bound.
  auto ds = ClusteredDataset::from_records({
      rec("A", 1.0, 1, {0.0}),
      rec("A", 2.0, 1, {0.0}),
      rec("B", 3.0, 1, {0.0}),
  });
  TrainConfig cfg;
  AlphaStep step = outer_alpha_step(ds, Eigen::VectorXd::Zero(2), cfg);
  CHECK(step.at_boundary);
  CHECK(step.alpha < 2e-6);
}

TEST_CASE("spread-out frailties move alpha off the floor", "[trainer]") {
  Rng rng(53);
  std::vector<SurvivalRecord> records;
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 3; ++j)
      records.push_back(rec("k" + std::to_string(i), 0.3 + rng.uniform(), 1, {0.0}));
  auto ds = ClusteredDataset::from_records(records);
  Eigen::VectorXd v(30);
  for (int i = 0; i < 30; ++i) v[i] = (i % 2 == 0) ? 1.0 : -1.0;
  AlphaStep step = outer_alpha_step(ds, v, TrainConfig{});
  CHECK_FALSE(step.at_boundary);
  CHECK(step.alpha > 0.1);
}

TEST_CASE("held-out loss combines the validation partial term with train corrections",
          "[trainer]") {
  auto all = ClusteredDataset::from_records({
      rec("A", 1.0, 1, {0.2}),
      rec("A", 2.0, 1, {-0.3}),
      rec("B", 3.0, 1, {0.8}),
      rec("B", 4.0, 0, {0.1}),
  });
  auto parts = split(all, SplitSpec{{Fold::train, Fold::validation, Fold::train, Fold::validation}});
  const ClusteredDataset& train = *parts.train;
  const ClusteredDataset& val = *parts.validation;
  Eigen::VectorXd eta_val(2);
  eta_val << 0.4, -0.2;
  FrailtyState fs;
  fs.v = Eigen::VectorXd::Zero(2);
  fs.v << 0.3, -0.3;
  fs.alpha = 0.9;

  double expect = -breslow_loglik(val, eta_val);
  for (int i = 0; i < 2; ++i)
    expect -= (fs.v[i] - std::exp(fs.v[i])) / fs.alpha - std::log(fs.alpha) / fs.alpha -
              std::lgamma(1.0 / fs.alpha);
  // Corrections use the training split's event counts (A: 1 event, B: 1 event).
  expect += a_correction(fs.alpha, 1.0) + a_correction(fs.alpha, 1.0);
  CHECK(detail::held_out_loss(val, eta_val, &fs, train) == Catch::Approx(expect).epsilon(1e-13));

  // Without a frailty state only the partial term remains.
  CHECK(detail::held_out_loss(val, eta_val, nullptr, train) ==
        Catch::Approx(-breslow_loglik(val, eta_val)).epsilon(1e-14));
}

TEST_CASE("zero epoch budget keeps the initialized network untouched", "[trainer]") {
  auto ds = ClusteredDataset::from_records(synthetic_records(7, 6, 5, 0.5, 0.2));
  TrainConfig cfg;
  cfg.hidden = {4};
  cfg.max_inner_epochs = 0;
  cfg.seed = 123;
  FitResult fit = fit_dnn_fm(ds, nullptr, cfg);

  Rng init_rng = Rng::stream(123, {0});
  MlpParams fresh = init_params(MlpArchitecture{2, {4}, Activation::relu}, init_rng);
  CHECK(fit.model.net.weights[0] == fresh.weights[0]);
  CHECK(fit.model.net.output_weights == fresh.output_weights);
  CHECK(fit.trace.epoch.empty());

  // Even without gradient steps the returned v sits on the closed-form fixed
  // point: one more refresh at the reported network and alpha does not move it.
  Eigen::VectorXd eta_m = forward(fit.model.net, ds.covariates()).eta;
  Eigen::VectorXd v = fit.model.v_hat;
  BaselineHazard base = estimate_baseline(ds, detail::eta_with_frailty(ds, eta_m, &v));
  Eigen::VectorXd events(ds.num_clusters());
  for (int i = 0; i < ds.num_clusters(); ++i)
    events[i] = static_cast<double>(ds.cluster_event_counts()[i]);
  Eigen::VectorXd u =
      frailty_bup(events, cluster_cum_hazard(ds, eta_m, base), fit.model.alpha_hat);
  for (int i = 0; i < v.size(); ++i) CHECK(std::log(u[i]) == Catch::Approx(v[i]).margin(1e-8));
}

TEST_CASE("training is bitwise deterministic in the seed", "[trainer]") {
  auto records = synthetic_records(11, 8, 6, 0.8, 0.2);
  auto ds = ClusteredDataset::from_records(records);
  TrainConfig cfg;
  cfg.hidden = {5};
  cfg.max_inner_epochs = 40;
  cfg.max_outer_iterations = 3;
  cfg.seed = 99;

  FitResult a = fit_dnn_fm(ds, nullptr, cfg);
  FitResult b = fit_dnn_fm(ds, nullptr, cfg);
  CHECK(a.model.alpha_hat == b.model.alpha_hat);
  CHECK(a.model.v_hat == b.model.v_hat);
  CHECK(a.model.net.weights[0] == b.model.net.weights[0]);
  CHECK(a.model.net.output_weights == b.model.net.output_weights);
  CHECK(a.trace.train_loss == b.trace.train_loss);
  CHECK(a.model.meta.final_train_loss == b.model.meta.final_train_loss);

  cfg.seed = 100;
  FitResult c = fit_dnn_fm(ds, nullptr, cfg);
  CHECK(a.model.net.weights[0] != c.model.net.weights[0]);
}

TEST_CASE("fits are invariant to record arrival order", "[trainer]") {
  auto records = synthetic_records(13, 7, 5, 0.6, 0.25);
  auto ds1 = ClusteredDataset::from_records(records);
  // Reverse arrival order: different cluster encoding, same content.
  std::vector<SurvivalRecord> reversed(records.rbegin(), records.rend());
  auto ds2 = ClusteredDataset::from_records(reversed);
  REQUIRE(ds1.cluster_labels() != ds2.cluster_labels());

  TrainConfig cfg;
  cfg.hidden = {4};
  cfg.max_inner_epochs = 30;
  cfg.max_outer_iterations = 2;
  cfg.seed = 7;
  FitResult f1 = fit_dnn_fm(ds1, nullptr, cfg);
  FitResult f2 = fit_dnn_fm(ds2, nullptr, cfg);

  CHECK(f1.model.alpha_hat == f2.model.alpha_hat);
  CHECK(f1.model.meta.final_train_loss == f2.model.meta.final_train_loss);
  CHECK(f1.model.net.weights[0] == f2.model.net.weights[0]);
  // Frailties agree per label, not per index.
  for (std::size_t i = 0; i < ds1.cluster_labels().size(); ++i) {
    auto j = f2.model.cluster_index(ds1.cluster_labels()[i]);
    REQUIRE(j.has_value());
    CHECK(f1.model.v_hat[static_cast<int>(i)] == f2.model.v_hat[*j]);
  }
  // Predictions agree everywhere.
  Eigen::VectorXd x(2);
  x << 0.4, -1.1;
  const std::string label = "g3";
  for (double t : {0.2, 0.9, 2.5})
    CHECK(predict_survival(f1.model, x, &label, t) == predict_survival(f2.model, x, &label, t));
}

TEST_CASE("early stopping restores the best validation iterate", "[trainer]") {
  auto all_records = synthetic_records(17, 10, 6, 0.0, 0.2);
  auto all = ClusteredDataset::from_records(all_records);
  SplitSpec spec;
  for (int r = 0; r < all.num_records(); ++r)
    spec.assignment.push_back(r % 3 == 2 ? Fold::validation : Fold::train);
  auto parts = split(all, spec);
  TrainConfig cfg;
  cfg.hidden = {8};
  cfg.learning_rate = 1.0;  // deliberately unstable to force overshoot
  cfg.max_inner_epochs = 400;
  cfg.patience = 3;
  cfg.seed = 3;
  FitResult fit = fit_dnn_cox(*parts.train, &*parts.validation, cfg);
  CHECK(fit.model.meta.epochs < 400);

  double best_seen = std::numeric_limits<double>::infinity();
  for (double vl : fit.trace.val_loss) best_seen = std::min(best_seen, vl);
  double at_returned = recompute_val_loss_dnn_cox(fit.model, *parts.validation, *parts.train);
  CHECK(at_returned == Catch::Approx(best_seen).epsilon(1e-12));
}

TEST_CASE("exploding updates raise a diagnosable error", "[trainer]") {
  auto ds = ClusteredDataset::from_records(synthetic_records(19, 6, 5, 0.5, 0.0));
  TrainConfig cfg;
  cfg.hidden = {};
  cfg.learning_rate = 1e8;
  cfg.max_inner_epochs = 50;
  CHECK_THROWS_AS(fit_fm(ds, nullptr, cfg), NonFiniteLossError);
}

TEST_CASE("trainer refuses event-free data", "[trainer]") {
  auto ds = ClusteredDataset::from_records({rec("A", 1.0, 0, {0.1})});
  CHECK_THROWS_AS(fit_dnn_fm(ds, nullptr, TrainConfig{}), NoEventsError);
  CHECK_THROWS_AS(fit_dnn_cox(ds, nullptr, TrainConfig{}), NoEventsError);
}

TEST_CASE("trace rows carry outer structure and adjustments", "[trainer]") {
  auto ds = ClusteredDataset::from_records(synthetic_records(23, 8, 5, 0.7, 0.2));
  TrainConfig cfg;
  cfg.hidden = {};
  cfg.max_inner_epochs = 25;
  cfg.max_outer_iterations = 4;
  FitResult fit = fit_fm(ds, nullptr, cfg);

  REQUIRE_FALSE(fit.trace.epoch.empty());
  for (std::size_t k = 1; k < fit.trace.epoch.size(); ++k)
    CHECK(fit.trace.epoch[k] == fit.trace.epoch[k - 1] + 1);
  CHECK(fit.trace.epoch.back() == fit.model.meta.epochs - 1);

  int marked = 0;
  for (double adj : fit.trace.adjustment)
    if (!std::isnan(adj)) ++marked;
  CHECK(marked == fit.model.meta.outer_iterations);
  CHECK(static_cast<int>(fit.model.meta.alpha_trace.size()) == fit.model.meta.outer_iterations);

  // Within an outer iteration alpha is constant on the trace.
  for (std::size_t k = 1; k < fit.trace.alpha.size(); ++k)
    if (fit.trace.outer[k] == fit.trace.outer[k - 1])
      CHECK(fit.trace.alpha[k] == fit.trace.alpha[k - 1]);
}

TEST_CASE("frailty-free data drives the variance estimate toward zero", "[trainer]") {
  // Strong signal, no shared frailty: alpha should collapse far below its start.
  auto ds = ClusteredDataset::from_records(synthetic_records(29, 60, 8, 0.0, 0.15));
  TrainConfig cfg;
  cfg.hidden = {};
  cfg.max_inner_epochs = 150;
  cfg.max_outer_iterations = 12;
  FitResult fit = fit_fm(ds, nullptr, cfg);
  CHECK(fit.model.alpha_hat < 0.15);

  double spread = 0.0;
  for (int i = 0; i < fit.model.v_hat.size(); ++i)
    spread = std::max(spread, std::abs(fit.model.v_hat[i]));
  CHECK(spread < 0.5);
}

TEST_CASE("true frailty variance is recovered to the right scale", "[trainer]") {
  // Generous tolerance: this is a sanity direction check, not the benchmark.
  auto ds = ClusteredDataset::from_records(synthetic_records(31, 150, 8, 1.0, 0.0));
  TrainConfig cfg;
  cfg.hidden = {};
  cfg.max_inner_epochs = 200;
  cfg.max_outer_iterations = 15;
  FitResult fit = fit_fm(ds, nullptr, cfg);
  CHECK(fit.model.alpha_hat > 0.4);
  CHECK(fit.model.alpha_hat < 2.0);
}

TEST_CASE("within-cluster minibatch training runs and stays deterministic", "[trainer]") {
  auto ds = ClusteredDataset::from_records(synthetic_records(37, 10, 6, 0.8, 0.0));
  REQUIRE(ds.num_events() == ds.num_records());
  TrainConfig cfg;
  cfg.hidden = {3};
  cfg.batch_size = 2;
  cfg.max_inner_epochs = 15;
  cfg.max_outer_iterations = 3;
  cfg.learning_rate = 0.05;
  FitResult a = fit_dnn_fm(ds, nullptr, cfg);
  FitResult b = fit_dnn_fm(ds, nullptr, cfg);
  CHECK(std::isfinite(a.model.meta.final_train_loss));
  CHECK(a.model.alpha_hat >= TrainConfig{}.alpha_lower);
  CHECK(a.model.alpha_hat <= TrainConfig{}.alpha_upper);
  CHECK(a.model.alpha_hat == b.model.alpha_hat);
  CHECK(a.model.net.weights[0] == b.model.net.weights[0]);
}

TEST_CASE("model kind dispatcher routes to every fitter", "[trainer]") {
  auto records = synthetic_records(41, 8, 6, 0.6, 0.2);
  auto ds = ClusteredDataset::from_records(records);
  TrainConfig cfg;
  cfg.hidden = {3};
  cfg.max_inner_epochs = 10;
  cfg.max_outer_iterations = 2;
  cfg.seed = 5;

  FitResult cox = fit_model(ModelKind::cox, ds, nullptr, cfg);
  CHECK(cox.model.kind == ModelKind::cox);
  CHECK(cox.model.net.arch.hidden.empty());
  CHECK(cox.model.meta.seed == 5);

  FitResult dnn_cox = fit_model(ModelKind::dnn_cox, ds, nullptr, cfg);
  CHECK(dnn_cox.model.kind == ModelKind::dnn_cox);
  CHECK(dnn_cox.model.v_hat.size() == 0);
  CHECK_FALSE(dnn_cox.model.baseline.empty());

  FitResult fm = fit_model(ModelKind::fm, ds, nullptr, cfg);
  CHECK(fm.model.kind == ModelKind::fm);
  CHECK(fm.model.net.arch.hidden.empty());
  CHECK(fm.model.v_hat.size() == ds.num_clusters());

  FitResult dnn_fm = fit_model(ModelKind::dnn_fm, ds, nullptr, cfg);
  CHECK(dnn_fm.model.kind == ModelKind::dnn_fm);
  CHECK(dnn_fm.model.net.arch.hidden == std::vector<int>{3});
  CHECK(dnn_fm.model.v_hat.size() == ds.num_clusters());
  // Every outer ends with the mean-one adjustment, so the constraint is exact.
  double mean_u = 0.0;
  for (int i = 0; i < dnn_fm.model.v_hat.size(); ++i) mean_u += std::exp(dnn_fm.model.v_hat[i]);
  mean_u /= dnn_fm.model.v_hat.size();
  CHECK(mean_u == Catch::Approx(1.0).epsilon(1e-9));
}
