#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "frailnet/dataset.hpp"
#include "frailnet/metrics.hpp"
#include "frailnet/rng.hpp"

using namespace frailnet;

namespace {

SurvivalRecord rec(std::string cluster, double time, int status, std::vector<double> x) {
  return SurvivalRecord{std::move(cluster), time, status, std::move(x)};
}

ClusteredDataset simple(const std::vector<double>& times, const std::vector<int>& status,
                        int clusters = 1) {
  std::vector<SurvivalRecord> records;
  for (std::size_t r = 0; r < times.size(); ++r)
    records.push_back(rec("c" + std::to_string(static_cast<int>(r) % clusters), times[r],
                          status[r], {0.0}));
  return ClusteredDataset::from_records(records);
}

}  // namespace

TEST_CASE("censoring survival is one when nothing is censored", "[metrics]") {
  auto ds = simple({1.0, 2.0, 3.0}, {1, 1, 1});
  CensoringKm km = CensoringKm::fit(ds);
  CHECK(km.times().empty());
  for (double t : {0.0, 1.5, 10.0}) CHECK(km.at(t) == 1.0);
}

TEST_CASE("censoring survival drops by hand-computed factors", "[metrics]") {
  auto ds = simple({1.0, 2.0, 3.0}, {0, 1, 0});
  CensoringKm km = CensoringKm::fit(ds);
  // Censoring at t=1: 3 at risk, factor 2/3. Censoring at t=3: last subject, 0.
  CHECK(km.at(0.5) == 1.0);
  CHECK(km.at(1.0) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(km.at(2.0) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(km.at(2.999) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(km.at(3.0) == 0.0);
  CHECK(km.at(50.0) == 0.0);
}

TEST_CASE("tied events leave the censoring risk set first", "[metrics]") {
  // At t=2 one event and one censoring coincide: the event leaves first, so the
  // censoring factor is 1 - 1/2, not 1 - 1/3.
  auto ds = simple({1.0, 2.0, 2.0, 4.0}, {1, 1, 0, 1});
  CensoringKm km = CensoringKm::fit(ds);
  CHECK(km.at(2.0) == Catch::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("censoring survival never increases", "[metrics]") {
  Rng rng(61);
  for (int it = 0; it < 20; ++it) {
    std::vector<double> times;
    std::vector<int> status;
    const int n = 5 + static_cast<int>(rng.uniform() * 30);
    for (int r = 0; r < n; ++r) {
      times.push_back(rng.uniform() < 0.3 ? 1.0 + std::floor(rng.uniform() * 4.0)
                                          : 0.2 + rng.uniform() * 5.0);
      status.push_back(rng.uniform() < 0.5 ? 1 : 0);
    }
    CensoringKm km = CensoringKm::fit(simple(times, status, 3));
    double prev = 1.0;
    for (double v : km.values()) {
      CHECK(v <= prev + 1e-15);
      CHECK(v >= 0.0);
      prev = v;
    }
  }
}

TEST_CASE("brier score without censoring is the mean squared error", "[metrics]") {
  auto ds = simple({1.0, 2.0}, {1, 1});
  CensoringKm km = CensoringKm::fit(ds);
  Eigen::VectorXd s = Eigen::VectorXd::Constant(2, 0.25);
  // t=1.5: record 1 failed (0 - .25)^2, record 2 alive (1 - .25)^2.
  CHECK(brier_score(ds, km, s, 1.5) ==
        Catch::Approx(0.5 * (0.0625 + 0.5625)).epsilon(1e-15));
}

TEST_CASE("an oracle that knows the outcomes scores zero", "[metrics]") {
  Rng rng(67);
  std::vector<double> times;
  std::vector<int> status(20, 1);
  for (int r = 0; r < 20; ++r) times.push_back(0.3 + rng.uniform() * 4.0);
  auto ds = simple(times, status, 4);
  CensoringKm km = CensoringKm::fit(ds);
  for (double t : {0.5, 1.7, 3.2}) {
    Eigen::VectorXd s(20);
    for (int r = 0; r < 20; ++r) s[r] = ds.time(r) > t ? 1.0 : 0.0;
    CHECK(brier_score(ds, km, s, t) == 0.0);
  }
}

TEST_CASE("inverse-censoring weights follow the hand-computed case", "[metrics]") {
  auto ds = simple({1.0, 2.0, 3.0, 4.0}, {0, 1, 1, 1});
  CensoringKm km = CensoringKm::fit(ds);
  // G = 3/4 from the censoring at t=1.
  Eigen::VectorXd s = Eigen::VectorXd::Constant(4, 0.5);
  const double t = 2.5;
  // Record 1: censored before t, weight 0. Record 2: event at 2 <= t, weight
  // 1/G(2) = 4/3, loss (0-.5)^2. Records 3 and 4: alive, weight 1/G(2.5) = 4/3,
  // loss (1-.5)^2 each.
  const double expect = (0.0 + (4.0 / 3.0) * 0.25 * 3.0) / 4.0;
  CHECK(brier_score(ds, km, s, t) == Catch::Approx(expect).epsilon(1e-14));
}

TEST_CASE("records with zero censoring weight drop out", "[metrics]") {
  // The censoring at t=3 exhausts its risk set (the tied event has already
  // left), so G(3) = 0 and the event at 3 is dropped instead of weighted by
  // an infinity. Only the event at t=1 contributes: 0.5^2 / 1, over 4 records.
  auto ds = simple({1.0, 2.0, 3.0, 3.0}, {1, 0, 0, 1});
  CensoringKm km = CensoringKm::fit(ds);
  CHECK(km.at(2.0) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(km.at(3.0) == 0.0);
  Eigen::VectorXd s = Eigen::VectorXd::Constant(4, 0.5);
  const double value = brier_score(ds, km, s, 3.5);
  CHECK(std::isfinite(value));
  CHECK(value == 0.0625);

  // With every record censored before t nothing contributes at all.
  auto all_censored = simple({1.0, 2.0}, {0, 0});
  CensoringKm km2 = CensoringKm::fit(all_censored);
  CHECK(km2.at(2.0) == 0.0);
  Eigen::VectorXd s2 = Eigen::VectorXd::Constant(2, 0.7);
  const double empty = brier_score(all_censored, km2, s2, 2.5);
  CHECK(std::isfinite(empty));
  CHECK(empty == 0.0);
}

TEST_CASE("time grids are inclusive, even, and validated", "[metrics]") {
  std::vector<double> grid = make_time_grid(5.0, 101);
  REQUIRE(grid.size() == 101);
  CHECK(grid.front() == 0.0);
  CHECK(grid.back() == 5.0);
  CHECK(grid[50] == Catch::Approx(2.5).epsilon(1e-15));
  CHECK_THROWS_AS(make_time_grid(0.0, 100), InvalidArgumentError);
  CHECK_THROWS_AS(make_time_grid(1.0, 1), InvalidArgumentError);
}

TEST_CASE("integrated score reproduces exact integrals", "[metrics]") {
  std::vector<double> grid = make_time_grid(2.0, 100);
  std::vector<double> constant(100, 0.1);
  CHECK(integrated_brier(grid, constant) == Catch::Approx(0.1).epsilon(1e-12));
  // Trapezoid is exact for linear curves: integral of t/2 over [0,2] is 1/2.
  std::vector<double> linear;
  for (double t : grid) linear.push_back(t / 2.0);
  CHECK(integrated_brier(grid, linear) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("integrated score preserves pointwise dominance", "[metrics]") {
  Rng rng(71);
  std::vector<double> grid = make_time_grid(3.0, 80);
  std::vector<double> low, high;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double b = rng.uniform() * 0.5;
    low.push_back(b);
    high.push_back(b + rng.uniform() * 0.2);
  }
  CHECK(integrated_brier(grid, low) <= integrated_brier(grid, high));
}

TEST_CASE("integrated score rejects bad grids", "[metrics]") {
  std::vector<double> grid = make_time_grid(1.0, 63);
  std::vector<double> vals(63, 0.1);
  CHECK_THROWS_AS(integrated_brier(grid, vals), InvalidArgumentError);
  grid = make_time_grid(1.0, 64);
  vals.assign(64, 0.1);
  CHECK_NOTHROW(integrated_brier(grid, vals));
  grid[10] = grid[9];
  CHECK_THROWS_AS(integrated_brier(grid, vals), InvalidArgumentError);
  CHECK_THROWS_AS(integrated_brier(grid, std::vector<double>(63, 0.1)), ShapeMismatchError);
}

TEST_CASE("concordance of perfect, random, and constant rankings", "[metrics]") {
  Eigen::VectorXd times(3);
  times << 1.0, 2.0, 3.0;
  Eigen::VectorXi status = Eigen::VectorXi::Ones(3);
  Eigen::VectorXd perfect(3), mixed(3), flat(3);
  perfect << 3.0, 2.0, 1.0;
  mixed << 2.0, 3.0, 1.0;
  flat << 1.0, 1.0, 1.0;
  CHECK(c_harrell(times, status, perfect) == 1.0);
  // Pairs (1,2) discordant, (1,3) and (2,3) concordant.
  CHECK(c_harrell(times, status, mixed) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(c_harrell(times, status, flat) == 0.5);
}

TEST_CASE("concordance skips pairs broken by censoring", "[metrics]") {
  Eigen::VectorXd times(3);
  times << 1.0, 2.0, 3.0;
  Eigen::VectorXi status(3);
  status << 1, 0, 1;
  Eigen::VectorXd scores(3);
  scores << 3.0, 1.0, 2.0;
  // Comparable: (1,2) and (1,3); the censored record 2 anchors no pair.
  CHECK(c_harrell(times, status, scores) == 1.0);

  Eigen::VectorXi none = Eigen::VectorXi::Zero(3);
  CHECK_THROWS_AS(c_harrell(times, none, scores), NoComparablePairsError);
  Eigen::VectorXd one(1);
  one << 1.0;
  Eigen::VectorXi one_status(1);
  one_status << 1;
  CHECK_THROWS_AS(c_harrell(one, one_status, one), NoComparablePairsError);
}

TEST_CASE("ties at the same time are not comparable", "[metrics]") {
  Eigen::VectorXd times(2);
  times << 2.0, 2.0;
  Eigen::VectorXi status = Eigen::VectorXi::Ones(2);
  Eigen::VectorXd scores(2);
  scores << 1.0, 0.0;
  CHECK_THROWS_AS(c_harrell(times, status, scores), NoComparablePairsError);
}

TEST_CASE("clustered concordance on a two-by-two hand case", "[metrics]") {
  auto ds = ClusteredDataset::from_records({
      rec("A", 1.0, 1, {0.0}),
      rec("A", 2.0, 1, {0.0}),
      rec("B", 1.5, 1, {0.0}),
      rec("B", 3.0, 1, {0.0}),
  });
  Eigen::VectorXd scores_m(4), v(4);
  scores_m << 1.0, 0.5, 2.0, 0.1;
  v << 1.0, 1.0, -1.0, -1.0;
  Eigen::VectorXd scores_full = scores_m + v;

  ClusteredConcordance cc = c_clustered(ds, scores_m, scores_full);
  // Within: both clusters rank their own pair correctly.
  CHECK(cc.pairs_within == 2);
  CHECK(cc.clusters_scored == 2);
  CHECK(cc.c_within == 1.0);
  // Between, on full scores: (A1,B1): 2.0 > 1.0; (A1,B2): 2.0 > -0.9;
  // (B1,A2): 1.0 < 1.5 discordant; (A2,B2): 1.5 > -0.9. Three of four.
  CHECK(cc.pairs_between == 4);
  CHECK(cc.c_between == Catch::Approx(0.75).epsilon(1e-15));
  CHECK(cc.c_overall == Catch::Approx((2.0 * 1.0 + 4.0 * 0.75) / 6.0).epsilon(1e-15));
}

TEST_CASE("single-cluster data has no between component", "[metrics]") {
  auto ds = ClusteredDataset::from_records({
      rec("A", 1.0, 1, {0.0}),
      rec("A", 2.0, 1, {0.0}),
      rec("A", 3.0, 1, {0.0}),
  });
  Eigen::VectorXd s(3);
  s << 3.0, 1.0, 2.0;
  ClusteredConcordance cc = c_clustered(ds, s, s);
  CHECK(cc.pairs_between == 0);
  CHECK(std::isnan(cc.c_between));
  CHECK(cc.pairs_within == 3);
  CHECK(cc.c_within == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(cc.c_overall == Catch::Approx(cc.c_within).epsilon(1e-15));
}

TEST_CASE("clustered concordance matches a brute-force tally", "[metrics]") {
  Rng rng(73);
  for (int it = 0; it < 10; ++it) {
    std::vector<SurvivalRecord> records;
    const int n_clusters = 4;
    const int n = 18 + static_cast<int>(rng.uniform() * 10);
    for (int r = 0; r < n; ++r)
      records.push_back(rec("c" + std::to_string(static_cast<int>(rng.uniform() * n_clusters)),
                            0.2 + rng.uniform() * 4.0, rng.uniform() < 0.7 ? 1 : 0,
                            {rng.normal()}));
    auto ds = ClusteredDataset::from_records(records);
    Eigen::VectorXd sm(n), sf(n);
    for (int r = 0; r < n; ++r) {
      sm[r] = rng.normal();
      sf[r] = sm[r] + 0.5 * rng.normal();
    }
    ClusteredConcordance cc = c_clustered(ds, sm, sf);

    // Brute force from the definitions.
    double within_sum = 0.0;
    long within_pairs = 0;
    int scored = 0;
    for (int i = 0; i < ds.num_clusters(); ++i) {
      double conc = 0.0;
      long pairs = 0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          if (a == b || ds.cluster(a) != i || ds.cluster(b) != i) continue;
          if (ds.status(a) == 1 && ds.time(a) < ds.time(b)) {
            ++pairs;
            conc += sm[a] > sm[b] ? 1.0 : (sm[a] == sm[b] ? 0.5 : 0.0);
          }
        }
      if (pairs > 0) {
        within_sum += conc / pairs;
        within_pairs += pairs;
        ++scored;
      }
    }
    double between_conc = 0.0;
    long between_pairs = 0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        if (ds.cluster(a) == ds.cluster(b)) continue;
        if (ds.status(a) == 1 && ds.time(a) < ds.time(b)) {
          ++between_pairs;
          between_conc += sf[a] > sf[b] ? 1.0 : (sf[a] == sf[b] ? 0.5 : 0.0);
        }
      }

    CHECK(cc.pairs_within == within_pairs);
    CHECK(cc.pairs_between == between_pairs);
    CHECK(cc.clusters_scored == scored);
    if (scored > 0)
      CHECK(cc.c_within == Catch::Approx(within_sum / scored).epsilon(1e-13));
    if (between_pairs > 0)
      CHECK(cc.c_between == Catch::Approx(between_conc / between_pairs).epsilon(1e-13));
    // Total comparable pairs split exactly into within plus between.
    long total = 0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        if (a != b && ds.status(a) == 1 && ds.time(a) < ds.time(b)) ++total;
    CHECK(total == cc.pairs_within + cc.pairs_between);
  }
}

TEST_CASE("concordance is invariant to monotone score transforms", "[metrics]") {
  Rng rng(79);
  for (int it = 0; it < 100; ++it) {
    const int n = 10 + static_cast<int>(rng.uniform() * 15);
    Eigen::VectorXd times(n), scores(n);
    Eigen::VectorXi status(n);
    for (int r = 0; r < n; ++r) {
      times[r] = 0.2 + rng.uniform() * 4.0;
      status[r] = rng.uniform() < 0.75 ? 1 : 0;
      scores[r] = 2.0 * rng.uniform() - 1.0;
    }
    int events = 0;
    for (int r = 0; r < n; ++r) events += status[r];
    if (events < 2) continue;

    const double base = c_harrell(times, status, scores);
    Eigen::VectorXd affine = 3.0 * scores.array() + 7.0;
    CHECK(c_harrell(times, status, affine) == base);
    Eigen::VectorXd curved = scores.array().tanh();
    CHECK(c_harrell(times, status, curved) == base);
  }
}

TEST_CASE("full evaluation ties the pieces together coherently", "[metrics]") {
  Rng rng(83);
  std::vector<SurvivalRecord> records;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 5; ++j) {
      double x1 = rng.normal(), x2 = rng.normal();
      records.push_back(rec("g" + std::to_string(i), 0.3 + rng.uniform() * 3.0,
                            rng.uniform() < 0.75 ? 1 : 0, {x1, x2}));
    }
  auto ds = ClusteredDataset::from_records(records);

  FittedModel m;
  m.kind = ModelKind::fm;
  m.net.arch = MlpArchitecture{2, {}, Activation::relu};
  m.net.output_weights = Eigen::VectorXd::Zero(2);
  m.net.output_weights << 0.5, -0.3;
  m.v_hat = Eigen::VectorXd::Zero(6);
  for (int i = 0; i < 6; ++i) m.v_hat[i] = 0.3 * rng.normal();
  m.alpha_hat = 0.5;
  m.cluster_labels = ds.cluster_labels();
  m.baseline = estimate_baseline(ds, ds.covariates() * m.net.output_weights);

  EvalReport rep = evaluate_model(ds, m);
  CHECK(rep.model_kind == "fm");
  CHECK(rep.num_records == 30);
  CHECK(rep.unknown_clusters == 0);
  REQUIRE(rep.grid.size() == 100);
  REQUIRE(rep.brier.size() == 100);
  CHECK(rep.grid.back() == ds.times().maxCoeff());
  CHECK(std::isfinite(rep.ibs));
  CHECK(rep.ibs >= 0.0);
  for (double b : rep.brier) CHECK(b >= 0.0);
  CHECK(rep.c_harrell > 0.0);
  CHECK(rep.c_harrell < 1.0);
  CHECK(rep.pairs_within + rep.pairs_between > 0);

  // The report's concordances equal direct recomputation.
  Eigen::VectorXd eta_m = ds.covariates() * m.net.output_weights;
  Eigen::VectorXd eta_full = eta_m;
  for (int r = 0; r < 30; ++r) eta_full[r] += m.v_hat[ds.cluster(r)];
  CHECK(rep.c_harrell == c_harrell(ds.times(), ds.statuses(), eta_full));
  ClusteredConcordance cc = c_clustered(ds, eta_m, eta_full);
  CHECK(rep.c_within == cc.c_within);
  CHECK(rep.c_between == cc.c_between);
  CHECK(rep.c_overall == cc.c_overall);

  // Unknown clusters are counted and predicted with unit frailty.
  FittedModel stranger = m;
  stranger.cluster_labels = {"z0", "z1", "z2", "z3", "z4", "z5"};
  EvalReport rep2 = evaluate_model(ds, stranger);
  CHECK(rep2.unknown_clusters == 30);
}
