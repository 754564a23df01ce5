// Copyright 2026 The MPCA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// mpca: command-line harness for the allocation experiments.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
// arguments, 3 a constraint could not be met (unconverged correction or no
// feasible CEM parameters).

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpca/kernels.hpp"
#include "mpca/pipeline.hpp"
#include "mpca/qnet.hpp"

namespace fs = std::filesystem;
using namespace mpca;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitUnmet = 3;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string algo;
  std::string adaptive;
  std::string baseline;
};

class Unmet : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ExperimentConfig resolve_config(const Options& opt) {
  ExperimentConfig cfg = opt.config_path.empty() ? ExperimentConfig{} : load_config(opt.config_path);
  if (opt.seed) cfg.apply_seed(*opt.seed);
  if (!opt.algo.empty()) cfg.train.algo = parse_algo(opt.algo);
  if (opt.adaptive == "on") cfg.train.adaptive_lambda = true;
  if (opt.adaptive == "off") cfg.train.adaptive_lambda = false;
  cfg.validate();
  return cfg;
}

void apply_worker_env() {
  const char* raw = std::getenv("MPCA_WORKERS");
  if (raw == nullptr || *raw == '\0') return;
  char* end = nullptr;
  long n = std::strtol(raw, &end, 10);
  if (*end != '\0' || n <= 0 || n > 4096) {
    throw ConfigError(std::string("MPCA_WORKERS must be a positive integer, got '") + raw + "'");
  }
  kernels::set_worker_count(static_cast<int>(n));
}

class Run {
 public:
  Run(const Options& opt, std::string command)
      : command_(std::move(command)), exp_(resolve_config(opt)), dir_(opt.out_dir) {
    fs::create_directories(dir_);
    std::ofstream(dir_ / "config.json") << std::setw(2) << config_to_json(exp_.config()) << "\n";
  }

  Experiment& exp() { return exp_; }
  const ExperimentConfig& cfg() const { return exp_.config(); }
  const std::string& hash() const { return exp_.hash(); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  bool exists(const std::string& name) const { return fs::exists(dir_ / name); }

  std::string output(const std::string& name) {
    outputs_.push_back(name);
    return path(name);
  }

  void finish() const {
    nlohmann::json m = {{"command", command_},
                        {"config_hash", hash()},
                        {"workers", kernels::worker_count()},
                        {"outputs", outputs_}};
    std::ofstream(dir_ / ("manifest_" + command_ + ".json")) << std::setw(2) << m << "\n";
    std::cout << "config_hash " << hash() << "\n";
  }

  std::string require(const std::string& name, const std::string& producer) const {
    if (!exists(name)) {
      throw ConfigError("missing " + path(name) + "; run '" + producer + "' with the same --out-dir first");
    }
    return path(name);
  }

 private:
  std::string command_;
  Experiment exp_;
  fs::path dir_;
  std::vector<std::string> outputs_;
};

std::vector<TransitionRecord> load_or_collect(Run& run) {
  if (run.exists("transitions.jsonl")) return read_transitions(run.path("transitions.jsonl"));
  return run.exp().collect();
}

LambdaVector trained_lambda(const Run& run) {
  const LambdaTable table = read_lambda_table(run.require("lambda_train.csv", "train"));
  return table.lookup(-1);
}

void print_rows(const std::vector<ResultRow>& rows) { std::cout << render_result_table(rows); }

void write_correction_report(const std::string& path, const CorrectionResult& res, const std::string& hash) {
  std::ofstream out(path);
  out << std::setprecision(17);
  out << "# config_hash=" << hash << "\n";
  out << "# residual_drift=" << res.residual_drift << "\n";
  out << "slice,phase,requests,budget,lambda,utilization,probes,converged,used_grid\n";
  for (const auto& p : res.phases) {
    out << p.slice << "," << p.phase << "," << p.requests << "," << p.budget << "," << p.search.lambda << ","
        << p.utilization << "," << p.search.probes << "," << (p.search.converged ? 1 : 0) << ","
        << (p.search.used_grid ? 1 : 0) << "\n";
  }
}

int cmd_gen_data(Run& run) {
  write_dataset(run.output("train_set.jsonl"), run.exp().train_set(), run.hash());
  write_dataset(run.output("eval_set.jsonl"), run.exp().eval_set(), run.hash());
  std::cout << "train requests " << run.exp().train_set().size() << ", eval requests "
            << run.exp().eval_set().size() << "\n";
  run.finish();
  return 0;
}

int cmd_collect(Run& run) {
  const auto records = run.exp().collect();
  write_transitions(run.output("transitions.jsonl"), records, run.hash());
  std::cout << "transitions " << records.size() << "\n";
  run.finish();
  return 0;
}

int cmd_train(Run& run) {
  const auto records = load_or_collect(run);
  const TrainConfig& tc = run.cfg().train;
  const TrainingData data = prepare_training_data(records, run.exp().encoder(), run.cfg().env.actions);
  EvalContext ctx{&run.exp().sim(), &run.exp().encoder(), run.exp().eval_set(), run.exp().static_eval().phase_cost};
  const TrainResult res = train(data, tc, run.exp().train_rates(), &ctx,
                                [&](long step, const QNetwork& net, const LambdaVector&) {
                                  const std::string name = "checkpoint_step" + std::to_string(step) + ".json";
                                  save_checkpoint(run.output(name), net.params(), run.hash());
                                });
  save_checkpoint(run.output("checkpoint.json"), res.params, run.hash());
  write_lambda_table(run.output("lambda_train.csv"), LambdaTable(res.lambda), run.hash());
  write_telemetry(run.output("telemetry.csv"), res.telemetry, run.hash());
  std::cout << "algo " << algo_name(tc.algo) << (tc.adaptive_lambda ? "+lambda" : "") << ", iterations "
            << tc.iterations << ", seconds " << std::fixed << std::setprecision(2) << res.seconds << "\n";
  std::cout << "lambda";
  for (double l : res.lambda.values()) std::cout << " " << std::setprecision(6) << l;
  std::cout << "\n";
  run.finish();
  return 0;
}

int cmd_correct(Run& run) {
  QNetwork net(load_checkpoint(run.require("checkpoint.json", "train")));
  const CorrectionResult res = run.exp().correct(net, trained_lambda(run));
  write_lambda_table(run.output("lambda_table.csv"), res, run.hash());
  write_correction_report(run.output("correction.csv"), res, run.hash());
  print_rows({run.exp().row("corrected", res.final_eval)});
  std::cout << "residual drift " << res.residual_drift << "\n";
  run.finish();
  if (!res.all_converged) {
    for (const auto& p : res.phases) {
      if (!p.search.converged) {
        std::cerr << "unconverged: slice " << p.slice << " phase " << p.phase << " utilization " << p.utilization
                  << (p.search.warning.empty() ? "" : " (" + p.search.warning + ")") << "\n";
      }
    }
    throw Unmet("lambda correction did not converge in every phase");
  }
  return 0;
}

int cmd_eval(Run& run) {
  QNetwork net(load_checkpoint(run.require("checkpoint.json", "train")));
  const LambdaTable table = read_lambda_table(run.require("lambda_table.csv", "correct"));
  QPolicy policy(net, run.exp().encoder(), table, QPolicyOptions{run.cfg().train.bcq_tau});
  const std::string name = algo_name(run.cfg().train.algo) + (run.cfg().train.adaptive_lambda ? "+lambda" : "");
  std::vector<ResultRow> rows{run.exp().row(name, run.exp().evaluate(policy))};
  write_result_rows(run.output("eval.csv"), rows, run.hash());
  print_rows(rows);
  run.finish();
  return 0;
}

int cmd_baseline(Run& run, const std::string& which) {
  std::vector<ResultRow> rows;
  bool feasible = true;
  if (which == "static") {
    rows.push_back(run.exp().row("static", run.exp().static_eval()));
  } else if (which == "dcaf") {
    const auto alloc = run.exp().dcaf();
    DcafPolicy policy(run.cfg().static_rule, alloc);
    rows.push_back(run.exp().row("dcaf", run.exp().evaluate(policy)));
  } else {
    const CemPolicyResult& cem = run.exp().cem();
    std::ofstream log(run.output("cem_progress.csv"));
    log << "# config_hash=" << run.hash() << "\niteration,best_reward,elite_mean_reward,mu_norm,sigma_norm\n";
    log << std::setprecision(17);
    for (const auto& it : cem.search.history) {
      log << it.iteration << "," << it.best_reward << "," << it.elite_mean_reward << "," << it.mu_norm << ","
          << it.sigma_norm << "\n";
    }
    LinearPolicy policy(cem.params, run.exp().encoder());
    rows.push_back(run.exp().row("cem", run.exp().evaluate(policy)));
    feasible = cem.search.found_feasible;
  }
  write_result_rows(run.output("baseline_" + which + ".csv"), rows, run.hash());
  print_rows(rows);
  run.finish();
  if (!feasible) throw Unmet("CEM found no budget-feasible parameters");
  return 0;
}

int cmd_serve(Run& run) {
  QNetwork net(load_checkpoint(run.require("checkpoint.json", "train")));
  const LambdaTable table = read_lambda_table(run.require("lambda_table.csv", "correct"));
  StreamConfig sc = run.cfg().serving;
  sc.requests_per_slice = run.exp().static_eval().slice_requests;
  sc.refresh.bisection = run.cfg().correction;
  sc.refresh.policy.bcq_tau = run.cfg().train.bcq_tau;
  const StreamReport rep = run_stream(net, run.exp().encoder(), run.exp().sim(), table, run.exp().budgets(), sc,
                                      QPolicyOptions{run.cfg().train.bcq_tau});
  write_serving_report(run.output("serving_report.csv"), rep, run.hash());
  write_control_log(run.output("control_log.csv"), rep, run.hash());
  std::cout << std::left << std::setw(6) << "slice" << std::right << std::setw(9) << "requests";
  for (size_t t = 0; t < rep.total_cost.size(); ++t) std::cout << std::setw(10) << ("util_" + std::to_string(t));
  std::cout << std::setw(11) << "return" << std::setw(10) << "clamp_s" << "\n";
  std::cout << std::fixed;
  for (const auto& s : rep.slices) {
    std::cout << std::left << std::setw(6) << s.slice << std::right << std::setw(9) << s.requests;
    for (double u : s.utilization) std::cout << std::setw(10) << std::setprecision(3) << u;
    std::cout << std::setw(11) << std::setprecision(1) << s.ret << std::setw(10) << std::setprecision(0)
              << s.clamp_seconds << "\n";
  }
  run.finish();
  return 0;
}

int cmd_sweep(Run& run) {
  const auto records = load_or_collect(run);
  const SweepConfig& grid = run.cfg().sweep;
  std::ofstream out(run.output("sweep.csv"));
  out << "# config_hash=" << run.hash() << "\n";
  out << "alpha,K,return,corrected_return,mean_abs_utilization_error,train_seconds,relative_time\n";
  out << std::setprecision(17);
  std::cout << std::setw(8) << "alpha" << std::setw(5) << "K" << std::setw(12) << "return" << std::setw(12)
            << "corrected" << std::setw(10) << "|u-1|" << std::setw(9) << "time\n";
  bool all_converged = true;
  for (double alpha : grid.alphas) {
    double base_seconds = std::nan("");
    for (int k : grid.rounds) {
      TrainConfig tc = run.cfg().train;
      tc.adaptive_lambda = true;
      tc.lambda_lr = alpha;
      tc.lambda_updates = k;
      const MethodRun m = run.exp().run_method(tc, records);
      all_converged = all_converged && m.correction.all_converged;
      if (k == grid.rounds.front()) base_seconds = m.training.seconds;
      double err = 0.0;
      const auto& anchor = run.exp().static_eval().phase_cost;
      for (size_t t = 0; t < anchor.size(); ++t) err += std::abs(m.uncorrected.phase_cost[t] / anchor[t] - 1.0);
      err /= static_cast<double>(anchor.size());
      const double rel = m.training.seconds / base_seconds;
      out << alpha << "," << k << "," << m.uncorrected.total_return << "," << m.correction.final_eval.total_return
          << "," << err << "," << m.training.seconds << "," << rel << "\n";
      std::cout << std::setw(8) << alpha << std::setw(5) << k << std::fixed << std::setprecision(1) << std::setw(12)
                << m.uncorrected.total_return << std::setw(12) << m.correction.final_eval.total_return
                << std::setprecision(3) << std::setw(10) << err << std::setprecision(0) << std::setw(7)
                << 100.0 * rel << "%\n";
      std::cout.unsetf(std::ios::fixed);
    }
  }
  run.finish();
  if (!all_converged) throw Unmet("lambda correction did not converge for every grid point");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-phase computation-resource allocation experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("--config", opt.config_path, "JSON experiment config (defaults when omitted)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", opt.seed, "Root seed; reseeds every stochastic stage");
  app.add_option("--out-dir", opt.out_dir, "Directory for all outputs")->capture_default_str();
  app.add_option("--algo", opt.algo, "Training algorithm")->check(CLI::IsMember({"ddqn", "bcq", "rem"}));
  app.add_option("--adaptive-lambda", opt.adaptive, "Adaptive multiplier updates during training")
      ->check(CLI::IsMember({"on", "off"}));

  auto* gen = app.add_subcommand("gen-data", "Write the training and evaluation request sets");
  auto* collect = app.add_subcommand("collect", "Roll out the behaviour mix and log transitions");
  auto* trn = app.add_subcommand("train", "Train a Q-network on the logged transitions");
  auto* corr = app.add_subcommand("correct", "Per-slice multiplier correction on the evaluation set");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint with its corrected multiplier table");
  auto* base = app.add_subcommand("baseline", "Evaluate a baseline policy");
  base->add_option("method", opt.baseline, "static, dcaf or cem")
      ->required()
      ->check(CLI::IsMember({"static", "dcaf", "cem"}));
  auto* serve = app.add_subcommand("serve", "Stream traffic through the serving loop with load control");
  auto* sweep = app.add_subcommand("sweep", "Grid over the multiplier step size and inner rounds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    apply_worker_env();
    auto* sub = app.get_subcommands().front();
    Run run(opt, sub->get_name());
    if (sub == gen) return cmd_gen_data(run);
    if (sub == collect) return cmd_collect(run);
    if (sub == trn) return cmd_train(run);
    if (sub == corr) return cmd_correct(run);
    if (sub == ev) return cmd_eval(run);
    if (sub == base) return cmd_baseline(run, opt.baseline);
    if (sub == serve) return cmd_serve(run);
    if (sub == sweep) return cmd_sweep(run);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Unmet& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUnmet;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
