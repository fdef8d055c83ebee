// Command-line driver: prepare, train, evaluate, simulate, bench-grad, sweep.
// Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print a
// single machine-parsable line "error: <code>: <message>" on stderr.

#include <chrono>
#include <cstdio>
#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "setrank/bpr.hpp"
#include "setrank/data.hpp"
#include "setrank/manifest.hpp"
#include "setrank/metrics.hpp"
#include "setrank/model.hpp"
#include "setrank/setwise.hpp"
#include "setrank/synthetic.hpp"
#include "setrank/trainer.hpp"

namespace {

using setrank::error;
using setrank::errc;

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string shortest(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::vector<std::uint32_t> parse_u32_list(const std::string& csv, const char* what) {
  std::vector<std::uint32_t> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
    } catch (const std::exception&) {
      throw error(errc::invalid_argument, std::string("bad ") + what + " list entry '" + tok + "'");
    }
  }
  if (out.empty()) throw error(errc::invalid_argument, std::string("empty ") + what + " list");
  return out;
}

std::vector<double> parse_double_list(const std::string& csv, const char* what) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw error(errc::invalid_argument, std::string("bad ") + what + " list entry '" + tok + "'");
    }
  }
  if (out.empty()) throw error(errc::invalid_argument, std::string("empty ") + what + " list");
  return out;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

struct TrainFlags {
  std::string model = "setrank";
  setrank::TrainConfig cfg;

  void add_to(CLI::App* cmd, bool with_model = true) {
    cfg.deterministic = false;  // flag semantics: present means on
    if (with_model)
      cmd->add_option("--model", model, "setrank | bpr")->check(CLI::IsMember({"setrank", "bpr"}));
    cmd->add_option("--r", cfg.rank, "latent rank");
    cmd->add_option("--lambda", cfg.lambda, "regularization");
    cmd->add_option("--lr", cfg.gamma, "initial step size");
    cmd->add_option("--decay", cfg.decay, "per-epoch step decay");
    cmd->add_option("--tau", cfg.tau, "negatives per train positive");
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--seed", cfg.seed, "random seed");
    cmd->add_option("--init-std", cfg.init_std, "factor init stddev");
    cmd->add_option("--threads", cfg.threads, "worker threads");
    cmd->add_flag("--deterministic", cfg.deterministic, "fixed reduction order");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["model"] = model;
    j["r"] = cfg.rank;
    j["lambda"] = cfg.lambda;
    j["lr"] = cfg.gamma;
    j["decay"] = cfg.decay;
    j["tau"] = cfg.tau;
    j["epochs"] = cfg.epochs;
    j["seed"] = cfg.seed;
    j["init_std"] = cfg.init_std;
    j["threads"] = cfg.threads;
    j["deterministic"] = cfg.deterministic;
    return j;
  }
};

void write_train_log(const std::string& path, const setrank::TrainResult& result) {
  auto out = setrank::detail::open_output(path);
  out << "epoch\tobjective\tval_p5\tgamma\n";
  for (const auto& row : result.log)
    out << row.epoch << '\t' << shortest(row.objective) << '\t' << fixed6(row.val_p5) << '\t'
        << shortest(row.gamma) << '\n';
}

int run_prepare(const std::string& input, double threshold, std::uint32_t min_pos,
                double train_frac, std::uint32_t cap, std::uint64_t seed,
                const std::string& delimiter, const std::string& out_path) {
  Timer timer;
  setrank::ParseOptions opts;
  opts.delimiter = delimiter == "comma" ? ',' : '\t';
  auto ds = setrank::binarize_file(input, threshold, opts);
  ds = setrank::filter_users(ds, min_pos);
  ds = setrank::split(ds, train_frac, cap, seed);
  ds.save_file(out_path);
  std::cout << "prepared " << ds.n_users() << " users, " << ds.n_items() << " items, "
            << ds.n_positives() << " positives -> " << out_path << "\n";

  setrank::RunManifest manifest;
  manifest.subcommand = "prepare";
  manifest.config = {{"input", input},        {"threshold", threshold}, {"min_pos", min_pos},
                     {"train_frac", train_frac}, {"cap", cap},          {"seed", seed},
                     {"delimiter", delimiter}, {"out", out_path}};
  manifest.input_paths = {input};
  manifest.output_paths = {out_path};
  manifest.wall_seconds = timer.seconds();
  manifest.write(out_path);
  return 0;
}

int run_train(const std::string& data_path, const TrainFlags& flags, const std::string& out_path,
              const std::string& log_path) {
  Timer timer;
  auto ds = setrank::ImplicitDataset::load_file(data_path);
  setrank::TrainResult result = flags.model == "bpr" ? setrank::train_bpr(ds, flags.cfg)
                                                     : setrank::train(ds, flags.cfg);
  if (result.diverged)
    std::cerr << "warning: training diverged (" << result.divergence_reason
              << "); keeping last good checkpoint\n";
  result.model.save_file(out_path);
  if (!log_path.empty()) write_train_log(log_path, result);
  std::cout << "trained " << flags.model << " for " << result.log.size() << " epochs; checkpoint epoch "
            << result.best_epoch << " -> " << out_path << "\n";

  setrank::RunManifest manifest;
  manifest.subcommand = "train";
  manifest.config = flags.to_json();
  manifest.config["data"] = data_path;
  manifest.config["out"] = out_path;
  manifest.config["log"] = log_path;
  manifest.input_paths = {data_path};
  manifest.output_paths = {out_path};
  if (!log_path.empty()) manifest.output_paths.push_back(log_path);
  manifest.wall_seconds = timer.seconds();
  manifest.write(out_path);
  return 0;
}

nlohmann::ordered_json report_to_json(const setrank::EvalReport& rep) {
  nlohmann::ordered_json j;
  j["tool"] = "setrank";
  j["type"] = "eval_report";
  j["cutoffs"] = rep.cutoffs;
  j["n_users"] = rep.n_users;
  j["n_evaluated"] = rep.n_evaluated;
  j["n_skipped"] = rep.n_skipped;
  nlohmann::ordered_json metrics;
  for (const char* name : {"precision", "recall", "map"}) {
    nlohmann::ordered_json per_cutoff;
    for (std::size_t c = 0; c < rep.cutoffs.size(); ++c) {
      const auto& src = name == std::string("precision") ? rep.precision
                        : name == std::string("recall")  ? rep.recall
                                                         : rep.map;
      per_cutoff[std::to_string(rep.cutoffs[c])] = src[c];
    }
    metrics[name] = per_cutoff;
  }
  j["metrics"] = metrics;
  return j;
}

std::string report_to_tsv(const setrank::EvalReport& rep) {
  std::ostringstream out;
  out << "cutoff\tprecision\trecall\tmap\n";
  for (std::size_t c = 0; c < rep.cutoffs.size(); ++c)
    out << rep.cutoffs[c] << '\t' << fixed6(rep.precision[c]) << '\t' << fixed6(rep.recall[c])
        << '\t' << fixed6(rep.map[c]) << '\n';
  return out.str();
}

int run_evaluate(const std::string& data_path, const std::string& model_path,
                 const std::string& cutoffs_csv, const std::string& format,
                 const std::string& per_user_path, const std::string& out_path, unsigned threads,
                 bool deterministic) {
  Timer timer;
  auto ds = setrank::ImplicitDataset::load_file(data_path);
  auto model = setrank::FactorModel::load_file(model_path);
  setrank::EvalOptions opts;
  opts.cutoffs = parse_u32_list(cutoffs_csv, "cutoff");
  opts.keep_per_user = !per_user_path.empty();
  opts.threads = threads;
  opts.deterministic = deterministic;
  auto rep = setrank::evaluate(model, ds, opts);

  std::string body = format == "json" ? report_to_json(rep).dump(2) + "\n" : report_to_tsv(rep);
  if (out_path.empty()) {
    std::cout << body;
  } else {
    auto out = setrank::detail::open_output(out_path);
    out << body;
    std::cout << "report -> " << out_path << "\n";
  }

  if (!per_user_path.empty()) {
    auto out = setrank::detail::open_output(per_user_path);
    out << "user\tn_relevant";
    for (auto p : rep.cutoffs)
      out << "\tp@" << p << "\tr@" << p << "\tap@" << p;
    out << '\n';
    for (const auto& row : rep.per_user) {
      if (row.n_relevant == 0) continue;
      out << ds.user_tokens()[row.user] << '\t' << row.n_relevant;
      for (std::size_t c = 0; c < rep.cutoffs.size(); ++c)
        out << '\t' << fixed6(row.precision[c]) << '\t' << fixed6(row.recall[c]) << '\t'
            << fixed6(row.ap[c]);
      out << '\n';
    }
  }

  if (!out_path.empty()) {
    setrank::RunManifest manifest;
    manifest.subcommand = "evaluate";
    manifest.config = {{"data", data_path},   {"model", model_path},       {"cutoffs", cutoffs_csv},
                       {"format", format},    {"per_user", per_user_path}, {"out", out_path},
                       {"threads", threads},  {"deterministic", deterministic}};
    manifest.input_paths = {data_path, model_path};
    manifest.output_paths = {out_path};
    if (!per_user_path.empty()) manifest.output_paths.push_back(per_user_path);
    manifest.wall_seconds = timer.seconds();
    manifest.write(out_path);
  }
  return 0;
}

int run_simulate(std::uint32_t users, std::uint32_t items, std::uint32_t rank, std::uint32_t J,
                 double alpha, std::uint32_t replicates, const std::string& sweep_csv,
                 const TrainFlags& flags, std::uint64_t seed, const std::string& out_path) {
  Timer timer;
  std::vector<std::uint32_t> n_list =
      sweep_csv.empty() ? std::vector<std::uint32_t>{users} : parse_u32_list(sweep_csv, "sweep");
  auto rows = setrank::scaling_sweep(items, rank, J, n_list, replicates, flags.cfg, seed, alpha);
  auto out = setrank::detail::open_output(out_path);
  out << "N\tM\tr\treplicate\tD\n";
  for (const auto& row : rows)
    out << row.n_users << '\t' << row.n_items << '\t' << row.rank << '\t' << row.replicate << '\t'
        << shortest(row.risk) << '\n';
  out.close();
  std::cout << "simulated " << rows.size() << " fits -> " << out_path << "\n";

  setrank::RunManifest manifest;
  manifest.subcommand = "simulate";
  manifest.config = flags.to_json();
  manifest.config["users"] = users;
  manifest.config["items"] = items;
  manifest.config["rank"] = rank;
  manifest.config["J"] = J;
  manifest.config["alpha"] = alpha;
  manifest.config["replicates"] = replicates;
  manifest.config["sweep"] = sweep_csv;
  manifest.config["sim_seed"] = seed;
  manifest.config["out"] = out_path;
  manifest.output_paths = {out_path};
  manifest.wall_seconds = timer.seconds();
  manifest.write(out_path);
  return 0;
}

int run_bench(std::uint32_t J, double tau, std::uint32_t r, std::uint32_t users,
              const std::string& out_path) {
  Timer timer;
  auto rep = setrank::bench_grad(J, tau, r, users);
  std::ostringstream body;
  body << "J\ttau\tr\tN\tM\tfast_seconds\tnaive_seconds\tspeedup\n";
  body << rep.positives_per_user << '\t' << shortest(rep.tau) << '\t' << rep.rank << '\t'
       << rep.n_users << '\t' << rep.n_items << '\t' << shortest(rep.fast_seconds) << '\t'
       << shortest(rep.naive_seconds) << '\t' << shortest(rep.speedup) << '\n';
  std::cout << body.str();
  if (!out_path.empty()) {
    auto out = setrank::detail::open_output(out_path);
    out << body.str();
    setrank::RunManifest manifest;
    manifest.subcommand = "bench-grad";
    manifest.config = {{"J", J}, {"tau", tau}, {"r", r}, {"users", users}, {"out", out_path}};
    manifest.output_paths = {out_path};
    manifest.wall_seconds = timer.seconds();
    manifest.write(out_path);
  }
  return 0;
}

int run_sweep(const std::string& data_path, const std::string& param, const std::string& values_csv,
              const TrainFlags& flags, const std::string& out_path) {
  Timer timer;
  auto ds = setrank::ImplicitDataset::load_file(data_path);
  auto values = parse_double_list(values_csv, "value");
  std::ostringstream body;
  body << param << "\tp_at_5\n";
  for (double v : values) {
    TrainFlags run = flags;
    if (param == "tau") {
      run.cfg.tau = v;
    } else {
      run.cfg.rank = static_cast<std::uint32_t>(v);
    }
    setrank::TrainResult result = run.model == "bpr" ? setrank::train_bpr(ds, run.cfg)
                                                     : setrank::train(ds, run.cfg);
    setrank::EvalOptions opts;
    opts.cutoffs = {5};
    opts.threads = run.cfg.threads;
    opts.deterministic = run.cfg.deterministic;
    auto rep = setrank::evaluate(result.model, ds, opts);
    body << shortest(v) << '\t' << fixed6(rep.precision[0]) << '\n';
  }
  auto out = setrank::detail::open_output(out_path);
  out << body.str();
  out.close();
  std::cout << body.str();

  setrank::RunManifest manifest;
  manifest.subcommand = "sweep";
  manifest.config = flags.to_json();
  manifest.config["data"] = data_path;
  manifest.config["param"] = param;
  manifest.config["values"] = values_csv;
  manifest.config["out"] = out_path;
  manifest.input_paths = {data_path};
  manifest.output_paths = {out_path};
  manifest.wall_seconds = timer.seconds();
  manifest.write(out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"setwise collaborative-ranking engine"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "binarize, filter, and split a rating log");
  std::string p_input, p_out, p_delim = "tab";
  double p_threshold = 3.0, p_frac = 0.5;
  std::uint32_t p_minpos = 1, p_cap = 10;
  std::uint64_t p_seed = 42;
  prepare->add_option("--input", p_input, "rating log (user, item, rating per line)")->required();
  prepare->add_option("--threshold", p_threshold, "keep ratings strictly greater than this");
  prepare->add_option("--min-pos", p_minpos, "drop users with fewer positives");
  prepare->add_option("--train-frac", p_frac, "fraction of positives sampled as train");
  prepare->add_option("--cap", p_cap, "max train positives per user");
  prepare->add_option("--seed", p_seed, "split seed");
  prepare->add_option("--delimiter", p_delim, "tab | comma")->check(CLI::IsMember({"tab", "comma"}));
  prepare->add_option("--out", p_out, "output dataset file")->required();

  // train
  auto* train = app.add_subcommand("train", "fit a ranking model");
  std::string t_data, t_out, t_log;
  TrainFlags t_flags;
  train->add_option("--data", t_data, "prepared dataset")->required();
  t_flags.add_to(train);
  train->add_option("--out", t_out, "model output file")->required();
  train->add_option("--log", t_log, "per-epoch TSV log");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "top-K metrics on the test split");
  std::string e_data, e_model, e_cutoffs = "5,10", e_format = "tsv", e_peruser, e_out;
  unsigned e_threads = 1;
  bool e_det = false;
  evaluate->add_option("--data", e_data, "prepared dataset")->required();
  evaluate->add_option("--model", e_model, "trained model file")->required();
  evaluate->add_option("--cutoffs", e_cutoffs, "comma-separated cutoffs");
  evaluate->add_option("--format", e_format, "tsv | json")->check(CLI::IsMember({"tsv", "json"}));
  evaluate->add_option("--per-user", e_peruser, "optional per-user TSV");
  evaluate->add_option("--out", e_out, "report file (stdout when absent)");
  evaluate->add_option("--threads", e_threads, "worker threads");
  evaluate->add_flag("--deterministic", e_det, "fixed reduction order");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "generative-model excess-risk experiment");
  std::uint32_t s_users = 500, s_items = 100, s_rank = 5, s_J = 5, s_reps = 5;
  double s_alpha = 1.0;
  std::uint64_t s_seed = 42;
  std::string s_sweep, s_out;
  TrainFlags s_flags;
  s_flags.cfg.deterministic = false;
  s_flags.cfg.lambda = 0.05;
  s_flags.cfg.gamma = 0.5;
  s_flags.cfg.decay = 0.97;
  s_flags.cfg.epochs = 150;
  simulate->add_option("--users", s_users, "users (ignored when --sweep is given)");
  simulate->add_option("--items", s_items, "items M");
  simulate->add_option("--rank", s_rank, "ground-truth and fitted rank");
  simulate->add_option("--J", s_J, "positives per user");
  simulate->add_option("--alpha", s_alpha, "bound on max sigmoid(X*)");
  simulate->add_option("--replicates", s_reps, "replicates per N");
  simulate->add_option("--sweep", s_sweep, "comma-separated list of N values");
  simulate->add_option("--seed", s_seed, "world seed");
  simulate->add_option("--lambda", s_flags.cfg.lambda, "fit regularization");
  simulate->add_option("--lr", s_flags.cfg.gamma, "fit step size");
  simulate->add_option("--decay", s_flags.cfg.decay, "fit step decay");
  simulate->add_option("--tau", s_flags.cfg.tau, "fit negative-sampling ratio");
  simulate->add_option("--epochs", s_flags.cfg.epochs, "fit epochs");
  simulate->add_option("--threads", s_flags.cfg.threads, "worker threads");
  simulate->add_flag("--deterministic", s_flags.cfg.deterministic, "fixed reduction order");
  simulate->add_option("--out", s_out, "sweep TSV output")->required();

  // bench-grad
  auto* bench = app.add_subcommand("bench-grad", "time fast vs naive gradients");
  std::uint32_t b_J = 100, b_r = 50, b_users = 500;
  double b_tau = 3.0;
  std::string b_out;
  bench->add_option("--J", b_J, "train positives per user");
  bench->add_option("--tau", b_tau, "negative-sampling ratio");
  bench->add_option("--r", b_r, "latent rank");
  bench->add_option("--users", b_users, "user count");
  bench->add_option("--out", b_out, "optional TSV output");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "train once per hyperparameter value, report test P@5");
  std::string w_data, w_param, w_values, w_out;
  TrainFlags w_flags;
  sweep->add_option("--data", w_data, "prepared dataset")->required();
  sweep->add_option("--param", w_param, "tau | r")->required()->check(CLI::IsMember({"tau", "r"}));
  sweep->add_option("--values", w_values, "comma-separated values")->required();
  w_flags.add_to(sweep);
  sweep->add_option("--out", w_out, "table TSV output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return 2;
  }

  try {
    if (prepare->parsed())
      return run_prepare(p_input, p_threshold, p_minpos, p_frac, p_cap, p_seed, p_delim, p_out);
    if (train->parsed()) return run_train(t_data, t_flags, t_out, t_log);
    if (evaluate->parsed())
      return run_evaluate(e_data, e_model, e_cutoffs, e_format, e_peruser, e_out, e_threads, e_det);
    if (simulate->parsed())
      return run_simulate(s_users, s_items, s_rank, s_J, s_alpha, s_reps, s_sweep, s_flags, s_seed,
                          s_out);
    if (bench->parsed()) return run_bench(b_J, b_tau, b_r, b_users, b_out);
    if (sweep->parsed()) return run_sweep(w_data, w_param, w_values, w_flags, w_out);
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
