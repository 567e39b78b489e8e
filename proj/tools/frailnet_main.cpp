// Command-line front end: simulate | fit | predict | evaluate | experiment.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "frailnet/frailnet.hpp"

namespace {

using frailnet::json;

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    out.push_back(std::stoi(s.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= s.size() && !s.empty()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    out.push_back(std::stod(s.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const frailnet::DataError*>(&e)) return "data";
  if (dynamic_cast<const frailnet::FitError*>(&e)) return "fit";
  if (dynamic_cast<const frailnet::InvalidArgumentError*>(&e)) return "invalid_argument";
  if (dynamic_cast<const frailnet::Error*>(&e)) return "runtime";
  return "internal";
}

struct SimulateArgs {
  frailnet::SimConfig cfg;
  std::string out_prefix;
};

int cmd_simulate(const SimulateArgs& args) {
  frailnet::SimOutput sim = frailnet::generate(args.cfg);
  const std::string data_path = args.out_prefix + ".csv";
  const std::string truth_path = args.out_prefix + "_truth.json";
  frailnet::write_csv(sim.dataset, data_path, {}, &sim.split);
  frailnet::detail::write_json_file(frailnet::sim_truth_to_json(sim.truth, args.cfg), truth_path);
  std::cout << "records: " << sim.dataset.num_records()
            << "\nclusters: " << sim.dataset.num_clusters()
            << "\nrealized_censoring: " << frailnet::csv::format_double(sim.truth.realized_censoring)
            << "\ndata: " << data_path << "\ntruth: " << truth_path << "\n";
  return 0;
}

struct FitArgs {
  std::string data_path;
  std::string model_kind;
  std::string out_path;
  std::string config_path;
  std::string trace_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_epochs;
  std::optional<std::string> hidden;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
};

int cmd_fit(const FitArgs& args) {
  frailnet::TrainConfig cfg;
  if (!args.config_path.empty())
    cfg = frailnet::train_config_from_json(frailnet::detail::read_json_file(args.config_path));
  if (args.seed) cfg.seed = *args.seed;
  if (args.max_epochs) cfg.max_inner_epochs = *args.max_epochs;
  if (args.hidden) cfg.hidden = parse_int_list(*args.hidden);
  if (args.learning_rate) cfg.learning_rate = *args.learning_rate;
  if (args.batch_size) cfg.batch_size = *args.batch_size;

  frailnet::LoadResult loaded = frailnet::load_csv(args.data_path);
  const frailnet::ClusteredDataset* train = &loaded.dataset;
  const frailnet::ClusteredDataset* val = nullptr;
  frailnet::SplitResult splits;
  if (loaded.split) {
    splits = frailnet::split(loaded.dataset, *loaded.split);
    if (!splits.train) throw frailnet::DataError("split column assigns no training records");
    train = &*splits.train;
    if (splits.validation) val = &*splits.validation;
  }

  frailnet::TrainTrace trace;
  frailnet::FitResult fit;
  try {
    fit = frailnet::fit_model(frailnet::parse_model_kind(args.model_kind), *train, val, cfg, &trace);
  } catch (...) {
    if (!args.trace_path.empty()) frailnet::write_trace_csv(trace, args.trace_path);
    throw;
  }
  frailnet::write_model(fit.model, args.out_path);
  if (!args.trace_path.empty()) frailnet::write_trace_csv(trace, args.trace_path);
  std::cout << "kind: " << frailnet::model_kind_name(fit.model.kind)
            << "\nepochs: " << fit.model.meta.epochs
            << "\nfinal_train_loss: " << frailnet::csv::format_double(fit.model.meta.final_train_loss)
            << "\nalpha_hat: " << frailnet::csv::format_double(fit.model.alpha_hat)
            << "\nconverged: " << (fit.model.meta.converged ? "true" : "false")
            << "\nmodel: " << args.out_path << "\n";
  return 0;
}

struct PredictArgs {
  std::string model_path;
  std::string data_path;
  std::string times;
  std::string out_path;
  bool strict = false;
};

int cmd_predict(const PredictArgs& args) {
  frailnet::FittedModel model = frailnet::read_model(args.model_path);
  frailnet::LoadResult loaded = frailnet::load_csv(args.data_path);
  const std::vector<double> times = parse_double_list(args.times);
  if (times.empty()) throw frailnet::InvalidArgumentError("no prediction times given");

  frailnet::csv::Writer w(args.out_path);
  w.row({"record", "cluster", "t", "survival"});
  const frailnet::ClusteredDataset& ds = loaded.dataset;
  for (int r = 0; r < ds.num_records(); ++r) {
    const std::string& label = ds.cluster_labels()[ds.cluster(r)];
    const Eigen::VectorXd x = ds.covariates().row(r).transpose();
    for (double t : times) {
      const double s = frailnet::predict_survival(model, x, &label, t, args.strict);
      w.row({std::to_string(r), label, frailnet::csv::format_double(t),
             frailnet::csv::format_double(s)});
    }
  }
  w.close();
  std::cout << "predictions: " << args.out_path << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string model_path;
  std::string data_path;
  std::string fold = "auto";
  std::string out_prefix;
  int grid_points = 100;
};

int cmd_evaluate(const EvaluateArgs& args) {
  frailnet::FittedModel model = frailnet::read_model(args.model_path);
  frailnet::LoadResult loaded = frailnet::load_csv(args.data_path);

  const frailnet::ClusteredDataset* eval_ds = &loaded.dataset;
  frailnet::SplitResult splits;
  std::string fold = args.fold;
  if (fold == "auto") fold = loaded.split ? "test" : "all";
  if (fold != "all") {
    if (!loaded.split)
      throw frailnet::DataError("--split " + fold + " requested but " + args.data_path +
                                " has no split column");
    splits = frailnet::split(loaded.dataset, *loaded.split);
    const std::optional<frailnet::ClusteredDataset>* chosen = nullptr;
    if (fold == "train") chosen = &splits.train;
    else if (fold == "validation") chosen = &splits.validation;
    else if (fold == "test") chosen = &splits.test;
    else throw frailnet::InvalidArgumentError("unknown fold '" + fold + "'");
    if (!chosen->has_value()) throw frailnet::DataError("fold '" + fold + "' is empty");
    eval_ds = &chosen->value();
  }

  frailnet::EvalReport report = frailnet::evaluate_model(*eval_ds, model, args.grid_points);
  const std::string json_path = args.out_prefix + "_report.json";
  const std::string brier_path = args.out_prefix + "_brier.csv";
  frailnet::write_eval_report(report, json_path, brier_path);
  auto show = [](double x) { return frailnet::csv::format_double(x); };
  std::cout << "records: " << report.num_records << "\nibs: " << show(report.ibs)
            << "\nc_harrell: " << show(report.c_harrell) << "\nc_within: " << show(report.c_within)
            << "\nc_between: " << show(report.c_between) << "\nc_overall: " << show(report.c_overall)
            << "\nreport: " << json_path << "\nbrier_curve: " << brier_path << "\n";
  return 0;
}

struct ExperimentArgs {
  std::string spec_path;
  std::string out_dir;
  int threads = 0;
};

int cmd_experiment(const ExperimentArgs& args) {
  frailnet::ExperimentSpec spec =
      frailnet::experiment_spec_from_json(frailnet::detail::read_json_file(args.spec_path));
  if (args.threads > 0) spec.threads = args.threads;
  frailnet::run_experiment(spec, args.out_dir, std::cout);
  std::cout << "summary: " << args.out_dir << "/summary.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep gamma-frailty survival models"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "Generate a clustered survival dataset");
  c_sim->add_option("--clusters", sim.cfg.clusters, "Number of clusters");
  c_sim->add_option("--cluster-size", sim.cfg.cluster_size, "Records per cluster");
  c_sim->add_option("--alpha", sim.cfg.alpha, "Frailty variance (0 disables frailty)")->required();
  c_sim->add_option("--censoring", sim.cfg.censoring_rate, "Target censoring rate")->required();
  c_sim->add_option("--rho", sim.cfg.rho, "Covariate AR(1) correlation");
  c_sim->add_option("--shape", sim.cfg.weibull_shape, "Weibull baseline shape");
  c_sim->add_option("--val-per-cluster", sim.cfg.validation_per_cluster, "Validation records per cluster");
  c_sim->add_option("--test-per-cluster", sim.cfg.test_per_cluster, "Test records per cluster");
  c_sim->add_option("--seed", sim.cfg.seed, "Seed");
  c_sim->add_option("--out", sim.out_prefix, "Output prefix")->required();

  FitArgs fit;
  CLI::App* c_fit = app.add_subcommand("fit", "Fit a survival model");
  c_fit->add_option("--data", fit.data_path, "Input CSV")->required();
  c_fit->add_option("--model", fit.model_kind, "cox | fm | dnn_cox | dnn_fm")->required();
  c_fit->add_option("--out", fit.out_path, "Output model JSON")->required();
  c_fit->add_option("--config", fit.config_path, "Training config JSON");
  c_fit->add_option("--trace", fit.trace_path, "Write per-epoch trace CSV");
  c_fit->add_option("--seed", fit.seed, "Seed override");
  c_fit->add_option("--max-epochs", fit.max_epochs, "Inner epoch cap override");
  c_fit->add_option("--hidden", fit.hidden, "Hidden widths, e.g. 10,10,10 (empty for linear)");
  c_fit->add_option("--learning-rate", fit.learning_rate, "Learning rate override");
  c_fit->add_option("--batch-size", fit.batch_size, "Per-cluster batch size (0 = full batch)");

  PredictArgs pred;
  CLI::App* c_pred = app.add_subcommand("predict", "Predict survival probabilities");
  c_pred->add_option("--model", pred.model_path, "Model JSON")->required();
  c_pred->add_option("--data", pred.data_path, "Input CSV")->required();
  c_pred->add_option("--times", pred.times, "Comma-separated evaluation times")->required();
  c_pred->add_option("--out", pred.out_path, "Output CSV")->required();
  c_pred->add_flag("--strict", pred.strict, "Fail on clusters missing from the model");

  EvaluateArgs eval;
  CLI::App* c_eval = app.add_subcommand("evaluate", "Score a model on a dataset");
  c_eval->add_option("--model", eval.model_path, "Model JSON")->required();
  c_eval->add_option("--data", eval.data_path, "Input CSV")->required();
  c_eval->add_option("--split", eval.fold, "train | validation | test | all (default: auto)");
  c_eval->add_option("--grid-points", eval.grid_points, "Brier grid size");
  c_eval->add_option("--out", eval.out_prefix, "Output prefix")->required();

  ExperimentArgs exp;
  CLI::App* c_exp = app.add_subcommand("experiment", "Run a simulation grid");
  c_exp->add_option("--spec", exp.spec_path, "Experiment spec JSON")->required();
  c_exp->add_option("--out", exp.out_dir, "Output directory")->required();
  c_exp->add_option("--threads", exp.threads, "Worker threads (default: FRAILNET_THREADS or hardware)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_sim->parsed()) return cmd_simulate(sim);
    if (c_fit->parsed()) return cmd_fit(fit);
    if (c_pred->parsed()) return cmd_predict(pred);
    if (c_eval->parsed()) return cmd_evaluate(eval);
    if (c_exp->parsed()) return cmd_experiment(exp);
  } catch (const std::exception& e) {
    json err{{"error", error_kind(e)}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 2;
}
