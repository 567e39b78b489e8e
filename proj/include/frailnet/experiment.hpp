#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "frailnet/csv.hpp"
#include "frailnet/errors.hpp"
#include "frailnet/metrics.hpp"
#include "frailnet/serialize.hpp"
#include "frailnet/sim.hpp"
#include "frailnet/trainer.hpp"

namespace frailnet {

struct ExperimentCell {
  double alpha = 1.0;
  double censoring = 0.15;
};

struct ExperimentSpec {
  std::vector<ExperimentCell> cells;
  std::vector<ModelKind> models;
  int replicates = 1;
  std::uint64_t master_seed = 0;
  SimConfig sim;      // alpha/censoring/seed overwritten per cell and replicate
  TrainConfig train;  // seed overwritten per fit
  int threads = 0;    // 0: resolve from environment, then hardware
};

inline ExperimentSpec experiment_spec_from_json(const json& j) {
  ExperimentSpec spec;
  for (const json& cell : j.at("cells"))
    spec.cells.push_back({cell.at("alpha").get<double>(), cell.at("censoring").get<double>()});
  if (spec.cells.empty()) throw DataError("experiment spec has no cells");
  for (const std::string& name : j.at("models").get<std::vector<std::string>>())
    spec.models.push_back(parse_model_kind(name));
  if (spec.models.empty()) throw DataError("experiment spec has no models");
  spec.replicates = j.value("replicates", 1);
  if (spec.replicates < 1) throw DataError("replicates must be positive");
  spec.master_seed = j.value("master_seed", 0ull);
  if (j.contains("sim")) {
    const json& s = j["sim"];
    spec.sim.clusters = s.value("clusters", spec.sim.clusters);
    spec.sim.cluster_size = s.value("cluster_size", spec.sim.cluster_size);
    spec.sim.cluster_sizes = s.value("cluster_sizes", spec.sim.cluster_sizes);
    spec.sim.rho = s.value("rho", spec.sim.rho);
    spec.sim.weibull_shape = s.value("weibull_shape", spec.sim.weibull_shape);
    spec.sim.validation_per_cluster = s.value("validation_per_cluster", spec.sim.validation_per_cluster);
    spec.sim.test_per_cluster = s.value("test_per_cluster", spec.sim.test_per_cluster);
  }
  if (j.contains("train")) spec.train = train_config_from_json(j["train"]);
  spec.threads = j.value("threads", 0);
  return spec;
}

/** Thread count: explicit request, else FRAILNET_THREADS, else hardware. */
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FRAILNET_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

namespace detail {

inline std::string cell_tag(const ExperimentCell& cell) {
  return "a" + csv::format_double(cell.alpha) + "_c" + csv::format_double(cell.censoring);
}

inline std::vector<std::string> replicate_header() {
  return {"alpha",  "censoring", "replicate",  "model",       "alpha_hat",
          "ibs",    "c_harrell", "c_within",   "c_between",   "c_overall",
          "epochs", "converged", "final_loss", "realized_censoring"};
}

struct ReplicateOutcome {
  std::vector<std::vector<std::string>> rows;
};

inline ReplicateOutcome run_replicate(const ExperimentSpec& spec, int cell_idx, int rep) {
  const ExperimentCell& cell = spec.cells[cell_idx];
  SimConfig sim_cfg = spec.sim;
  sim_cfg.alpha = cell.alpha;
  sim_cfg.censoring_rate = cell.censoring;
  sim_cfg.seed = Rng::derive_seed(spec.master_seed,
                                  {2, static_cast<std::uint64_t>(cell_idx),
                                   static_cast<std::uint64_t>(rep)});
  SimOutput sim = generate(sim_cfg);
  SplitResult splits = split(sim.dataset, sim.split);
  if (!splits.train) throw DataError("experiment split produced no training records");

  ReplicateOutcome out;
  auto opt = [](double x) { return std::isfinite(x) ? csv::format_double(x) : std::string(); };
  for (std::size_t m = 0; m < spec.models.size(); ++m) {
    TrainConfig train_cfg = spec.train;
    train_cfg.seed = Rng::derive_seed(spec.master_seed,
                                      {3, static_cast<std::uint64_t>(cell_idx),
                                       static_cast<std::uint64_t>(rep), m});
    const ClusteredDataset* val = splits.validation ? &*splits.validation : nullptr;
    FitResult fit = fit_model(spec.models[m], *splits.train, val, train_cfg);
    const ClusteredDataset& eval_ds = splits.test ? *splits.test : *splits.train;
    EvalReport rep_metrics = evaluate_model(eval_ds, fit.model);
    out.rows.push_back({csv::format_double(cell.alpha), csv::format_double(cell.censoring),
                        std::to_string(rep), model_kind_name(spec.models[m]),
                        opt(fit.model.alpha_hat), opt(rep_metrics.ibs),
                        opt(rep_metrics.c_harrell), opt(rep_metrics.c_within),
                        opt(rep_metrics.c_between), opt(rep_metrics.c_overall),
                        std::to_string(fit.model.meta.epochs),
                        fit.model.meta.converged ? "1" : "0",
                        opt(fit.model.meta.final_train_loss),
                        csv::format_double(sim.truth.realized_censoring)});
  }
  return out;
}

// A raw file is reusable when it parses and holds one row per model.
inline bool replicate_file_complete(const std::string& path, std::size_t models) {
  if (!std::filesystem::exists(path)) return false;
  try {
    csv::Table t = csv::read_file(path);
    return t.header == replicate_header() && t.rows.size() == models;
  } catch (const Error&) {
    return false;
  }
}

struct Aggregate {
  int n = 0;
  double sum = 0.0, sum_sq = 0.0;
  void add(double x) { ++n; sum += x; sum_sq += x * x; }
  double mean() const { return sum / n; }
  double sd() const {
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean();
    return std::sqrt(std::max(0.0, (sum_sq - n * m * m) / (n - 1)));
  }
};

}  // namespace detail

/**
 * Run the full grid: every (cell, replicate) simulates one population, fits
 * every requested model, and writes one raw CSV. Completed raw files from a
 * previous run are reused, so an interrupted experiment resumes where it
 * stopped. Identical seeds give identical outputs at any thread count.
 */
inline void run_experiment(const ExperimentSpec& spec, const std::string& out_dir,
                           std::ostream& log) {
  namespace fs = std::filesystem;
  const fs::path raw_dir = fs::path(out_dir) / "raw";
  fs::create_directories(raw_dir);

  struct Task {
    int cell_idx;
    int rep;
    std::string path;
  };
  std::vector<Task> tasks;
  for (int c = 0; c < static_cast<int>(spec.cells.size()); ++c)
    for (int k = 0; k < spec.replicates; ++k) {
      const std::string name = detail::cell_tag(spec.cells[c]) + "_r" + std::to_string(k) + ".csv";
      tasks.push_back({c, k, (raw_dir / name).string()});
    }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::vector<std::string> failures;

  auto worker = [&]() {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      const Task& task = tasks[t];
      if (detail::replicate_file_complete(task.path, spec.models.size())) {
        std::lock_guard<std::mutex> lock(log_mutex);
        log << "reuse " << task.path << "\n";
        continue;
      }
      try {
        detail::ReplicateOutcome outcome = detail::run_replicate(spec, task.cell_idx, task.rep);
        const std::string tmp = task.path + ".tmp";
        {
          csv::Writer w(tmp);
          w.row(detail::replicate_header());
          for (const auto& row : outcome.rows) w.row(row);
          w.close();
        }
        fs::rename(tmp, task.path);
        std::lock_guard<std::mutex> lock(log_mutex);
        log << "done " << task.path << "\n";
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(log_mutex);
        failures.push_back(task.path + ": " + e.what());
        log << "fail " << task.path << ": " << e.what() << "\n";
      }
    }
  };

  const int threads = std::min<int>(resolve_threads(spec.threads), static_cast<int>(tasks.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Aggregate in task order so the summary is independent of thread timing.
  struct Key {
    int cell_idx;
    std::string model;
  };
  std::vector<Key> keys;
  std::vector<std::array<detail::Aggregate, 4>> stats;  // ibs, c_harrell, c_overall, alpha_hat
  auto slot = [&](int cell_idx, const std::string& model) -> std::array<detail::Aggregate, 4>& {
    for (std::size_t s = 0; s < keys.size(); ++s)
      if (keys[s].cell_idx == cell_idx && keys[s].model == model) return stats[s];
    keys.push_back({cell_idx, model});
    stats.emplace_back();
    return stats.back();
  };
  for (const Task& task : tasks) {
    if (!std::filesystem::exists(task.path)) continue;
    csv::Table t = csv::read_file(task.path);
    for (const auto& row : t.rows) {
      auto& agg = slot(task.cell_idx, row[3]);
      auto field = [&](int col) {
        return row[col].empty() ? std::numeric_limits<double>::quiet_NaN()
                                : csv::parse_double(row[col], 1, t.header[col]);
      };
      const double ibs = field(5), ch = field(6), co = field(9), ah = field(4);
      if (std::isfinite(ibs)) agg[0].add(ibs);
      if (std::isfinite(ch)) agg[1].add(ch);
      if (std::isfinite(co)) agg[2].add(co);
      if (std::isfinite(ah)) agg[3].add(ah);
    }
  }
  {
    csv::Writer w((fs::path(out_dir) / "summary.csv").string());
    w.row({"alpha", "censoring", "model", "replicates", "ibs_mean", "ibs_sd", "c_harrell_mean",
           "c_harrell_sd", "c_overall_mean", "c_overall_sd", "alpha_hat_mean", "alpha_hat_sd"});
    auto opt = [](double x) { return std::isfinite(x) ? csv::format_double(x) : std::string(); };
    for (std::size_t s = 0; s < keys.size(); ++s) {
      const ExperimentCell& cell = spec.cells[keys[s].cell_idx];
      const auto& agg = stats[s];
      w.row({csv::format_double(cell.alpha), csv::format_double(cell.censoring), keys[s].model,
             std::to_string(agg[0].n), opt(agg[0].n ? agg[0].mean() : NAN), opt(agg[0].sd()),
             opt(agg[1].n ? agg[1].mean() : NAN), opt(agg[1].sd()),
             opt(agg[2].n ? agg[2].mean() : NAN), opt(agg[2].sd()),
             opt(agg[3].n ? agg[3].mean() : NAN), opt(agg[3].sd())});
    }
    w.close();
  }

  if (!failures.empty()) {
    std::string msg = std::to_string(failures.size()) + " replicate(s) failed; first: " + failures.front();
    throw FitError(msg);
  }
}

}  // namespace frailnet
