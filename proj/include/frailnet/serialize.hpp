#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "frailnet/csv.hpp"
#include "frailnet/errors.hpp"
#include "frailnet/metrics.hpp"
#include "frailnet/model.hpp"
#include "frailnet/sim.hpp"
#include "frailnet/trainer.hpp"

namespace frailnet {

using json = nlohmann::json;

namespace detail {

inline json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Eigen::VectorXd vector_from_json(const json& arr) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

inline json finite_or_null(double x) {
  if (std::isfinite(x)) return json(x);
  return json();
}

inline double json_or_infinity(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return j;
}

inline void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fitted model
// ---------------------------------------------------------------------------

inline json model_to_json(const FittedModel& model) {
  json j;
  j["format"] = "frailnet-model";
  j["version"] = 1;
  j["kind"] = model_kind_name(model.kind);
  j["architecture"] = {{"input_dim", model.net.arch.input_dim},
                       {"hidden", model.net.arch.hidden},
                       {"activation", activation_name(model.net.arch.activation)}};
  json layers = json::array();
  for (std::size_t l = 0; l < model.net.weights.size(); ++l) {
    const Eigen::MatrixXd& w = model.net.weights[l];
    json weights = json::array();
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index c = 0; c < w.cols(); ++c) weights.push_back(w(i, c));
    layers.push_back({{"rows", w.rows()},
                      {"cols", w.cols()},
                      {"weights", std::move(weights)},
                      {"bias", detail::vector_to_json(model.net.biases[l])}});
  }
  j["layers"] = std::move(layers);
  j["output_weights"] = detail::vector_to_json(model.net.output_weights);
  j["alpha_hat"] = model.alpha_hat;
  j["v_hat"] = detail::vector_to_json(model.v_hat);
  j["cluster_labels"] = model.cluster_labels;
  j["baseline"] = {{"times", model.baseline.times()},
                   {"increments", model.baseline.increments()}};
  j["meta"] = {{"seed", model.meta.seed},
               {"epochs", model.meta.epochs},
               {"outer_iterations", model.meta.outer_iterations},
               {"final_train_loss", model.meta.final_train_loss},
               {"alpha_trace", model.meta.alpha_trace},
               {"converged", model.meta.converged},
               {"alpha_at_boundary", model.meta.alpha_at_boundary},
               {"message", model.meta.message}};
  return j;
}

inline FittedModel model_from_json(const json& j) {
  if (j.value("format", "") != "frailnet-model")
    throw DataError("not a model file (missing format marker)");
  FittedModel model;
  model.kind = parse_model_kind(j.at("kind").get<std::string>());
  const json& arch = j.at("architecture");
  model.net.arch.input_dim = arch.at("input_dim").get<int>();
  model.net.arch.hidden = arch.at("hidden").get<std::vector<int>>();
  model.net.arch.activation = parse_activation(arch.at("activation").get<std::string>());
  for (const json& layer : j.at("layers")) {
    const Eigen::Index rows = layer.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = layer.at("cols").get<Eigen::Index>();
    const json& weights = layer.at("weights");
    if (static_cast<Eigen::Index>(weights.size()) != rows * cols)
      throw DataError("layer weight count does not match rows*cols");
    Eigen::MatrixXd w(rows, cols);
    std::size_t pos = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index c = 0; c < cols; ++c) w(i, c) = weights[pos++].get<double>();
    model.net.weights.push_back(std::move(w));
    model.net.biases.push_back(detail::vector_from_json(layer.at("bias")));
  }
  model.net.output_weights = detail::vector_from_json(j.at("output_weights"));
  model.alpha_hat = j.at("alpha_hat").get<double>();
  model.v_hat = detail::vector_from_json(j.at("v_hat"));
  model.cluster_labels = j.at("cluster_labels").get<std::vector<std::string>>();
  const json& baseline = j.at("baseline");
  model.baseline = BaselineHazard(baseline.at("times").get<std::vector<double>>(),
                                  baseline.at("increments").get<std::vector<double>>());
  const json& meta = j.at("meta");
  model.meta.seed = meta.at("seed").get<std::uint64_t>();
  model.meta.epochs = meta.at("epochs").get<int>();
  model.meta.outer_iterations = meta.at("outer_iterations").get<int>();
  model.meta.final_train_loss = meta.at("final_train_loss").get<double>();
  model.meta.alpha_trace = meta.at("alpha_trace").get<std::vector<double>>();
  model.meta.converged = meta.at("converged").get<bool>();
  model.meta.alpha_at_boundary = meta.at("alpha_at_boundary").get<bool>();
  model.meta.message = meta.at("message").get<std::string>();
  return model;
}

inline void write_model(const FittedModel& model, const std::string& path) {
  detail::write_json_file(model_to_json(model), path);
}

inline FittedModel read_model(const std::string& path) {
  return model_from_json(detail::read_json_file(path));
}

// ---------------------------------------------------------------------------
// Training configuration and trace
// ---------------------------------------------------------------------------

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.hidden = j.value("hidden", cfg.hidden);
  if (j.contains("activation")) cfg.activation = parse_activation(j["activation"].get<std::string>());
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.max_inner_epochs = j.value("max_inner_epochs", cfg.max_inner_epochs);
  cfg.patience = j.value("patience", cfg.patience);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.max_outer_iterations = j.value("max_outer_iterations", cfg.max_outer_iterations);
  cfg.outer_tolerance = j.value("outer_tolerance", cfg.outer_tolerance);
  cfg.alpha_lower = j.value("alpha_lower", cfg.alpha_lower);
  cfg.alpha_upper = j.value("alpha_upper", cfg.alpha_upper);
  cfg.alpha_tolerance = j.value("alpha_tolerance", cfg.alpha_tolerance);
  cfg.initial_alpha = j.value("initial_alpha", cfg.initial_alpha);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

inline json train_config_to_json(const TrainConfig& cfg) {
  return json{{"hidden", cfg.hidden},
              {"activation", activation_name(cfg.activation)},
              {"learning_rate", cfg.learning_rate},
              {"weight_decay", cfg.weight_decay},
              {"max_inner_epochs", cfg.max_inner_epochs},
              {"patience", cfg.patience},
              {"batch_size", cfg.batch_size},
              {"max_outer_iterations", cfg.max_outer_iterations},
              {"outer_tolerance", cfg.outer_tolerance},
              {"alpha_lower", cfg.alpha_lower},
              {"alpha_upper", cfg.alpha_upper},
              {"alpha_tolerance", cfg.alpha_tolerance},
              {"initial_alpha", cfg.initial_alpha},
              {"seed", cfg.seed}};
}

inline void write_trace_csv(const TrainTrace& trace, const std::string& path) {
  csv::Writer w(path);
  w.row({"epoch", "outer", "alpha", "train_loss", "val_loss", "adjustment"});
  for (std::size_t r = 0; r < trace.epoch.size(); ++r) {
    auto opt = [](double x) { return std::isnan(x) ? std::string() : csv::format_double(x); };
    w.row({std::to_string(trace.epoch[r]), std::to_string(trace.outer[r]),
           csv::format_double(trace.alpha[r]), csv::format_double(trace.train_loss[r]),
           opt(trace.val_loss[r]), opt(trace.adjustment[r])});
  }
  w.close();
}

// ---------------------------------------------------------------------------
// Evaluation report and simulation truth
// ---------------------------------------------------------------------------

inline json eval_report_to_json(const EvalReport& rep) {
  return json{{"model_kind", rep.model_kind},
              {"num_records", rep.num_records},
              {"unknown_clusters", rep.unknown_clusters},
              {"ibs", detail::finite_or_null(rep.ibs)},
              {"c_harrell", detail::finite_or_null(rep.c_harrell)},
              {"c_within", detail::finite_or_null(rep.c_within)},
              {"c_between", detail::finite_or_null(rep.c_between)},
              {"c_overall", detail::finite_or_null(rep.c_overall)},
              {"pairs_within", rep.pairs_within},
              {"pairs_between", rep.pairs_between}};
}

inline void write_eval_report(const EvalReport& rep, const std::string& json_path,
                              const std::string& brier_csv_path) {
  detail::write_json_file(eval_report_to_json(rep), json_path);
  if (brier_csv_path.empty()) return;
  csv::Writer w(brier_csv_path);
  w.row({"t", "brier"});
  for (std::size_t g = 0; g < rep.grid.size(); ++g)
    w.row({csv::format_double(rep.grid[g]), csv::format_double(rep.brier[g])});
  w.close();
}

inline json sim_truth_to_json(const SimTruth& truth, const SimConfig& cfg) {
  json censor = json::array();
  for (Eigen::Index r = 0; r < truth.censor_time.size(); ++r)
    censor.push_back(detail::finite_or_null(truth.censor_time[r]));
  return json{{"config",
               {{"clusters", cfg.clusters},
                {"cluster_size", cfg.cluster_size},
                {"cluster_sizes", cfg.cluster_sizes},
                {"rho", cfg.rho},
                {"weibull_shape", cfg.weibull_shape},
                {"alpha", cfg.alpha},
                {"censoring_rate", cfg.censoring_rate},
                {"validation_per_cluster", cfg.validation_per_cluster},
                {"test_per_cluster", cfg.test_per_cluster},
                {"seed", cfg.seed}}},
              {"lambda_c", truth.lambda_c},
              {"target_censoring", truth.target_censoring},
              {"realized_censoring", truth.realized_censoring},
              {"cluster_u", detail::vector_to_json(truth.cluster_u)},
              {"f", detail::vector_to_json(truth.f)},
              {"event_time", detail::vector_to_json(truth.event_time)},
              {"censor_time", std::move(censor)}};
}

inline SimTruth sim_truth_from_json(const json& j) {
  SimTruth truth;
  truth.lambda_c = j.at("lambda_c").get<double>();
  truth.target_censoring = j.at("target_censoring").get<double>();
  truth.realized_censoring = j.at("realized_censoring").get<double>();
  truth.cluster_u = detail::vector_from_json(j.at("cluster_u"));
  truth.f = detail::vector_from_json(j.at("f"));
  truth.event_time = detail::vector_from_json(j.at("event_time"));
  const json& censor = j.at("censor_time");
  truth.censor_time.resize(censor.size());
  for (std::size_t r = 0; r < censor.size(); ++r)
    truth.censor_time[static_cast<Eigen::Index>(r)] = detail::json_or_infinity(censor[r]);
  return truth;
}

}  // namespace frailnet
