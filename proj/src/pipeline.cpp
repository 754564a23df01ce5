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

#include "mpca/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "mpca/rng.hpp"

namespace mpca {
namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so that
// typos surface as errors instead of silently falling back to defaults.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = doc_.find(key);
    if (it == doc_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  void get_seed(const char* key, std::uint64_t& out) {
    seen_.insert(key);
    auto it = doc_.find(key);
    if (it == doc_.end()) return;
    const bool ok = it->is_number_unsigned() || (it->is_number_integer() && it->get<std::int64_t>() >= 0);
    if (!ok) throw ConfigError(where(key) + ": seed must be a non-negative integer");
    out = it->get<std::uint64_t>();
  }

  bool has(const char* key) {
    seen_.insert(key);
    return doc_.contains(key);
  }

  Section child(const char* key) {
    seen_.insert(key);
    auto it = doc_.find(key);
    static const json kEmpty = json::object();
    return Section(it == doc_.end() ? kEmpty : *it, where(key));
  }

  void finish() const {
    for (auto it = doc_.begin(); it != doc_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + where(it.key()) + "'");
    }
  }

 private:
  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_env(Section s, EnvConfig& env) {
  auto a = s.child("actions");
  a.get("channel_count", env.actions.channel_count);
  a.get("queue_buckets", env.actions.queue_buckets);
  a.get("queue_bucket_width", env.actions.queue_bucket_width);
  a.get("model_count", env.actions.model_count);
  a.finish();
  auto c = s.child("costs");
  c.get("channel_unit_costs", env.costs.channel_unit_costs);
  c.get("queue_cost_per_item", env.costs.queue_cost_per_item);
  c.get("model_costs", env.costs.model_costs);
  c.finish();
  auto r = s.child("reward");
  r.get("k1", env.reward.k1);
  r.get("k2", env.reward.k2);
  r.finish();
  s.get("train_requests", env.num_requests);
  s.get("num_slices", env.num_slices);
  s.get("traffic_profile", env.traffic_profile);
  s.get("traffic_amplitude", env.traffic_amplitude);
  s.get("p_min", env.p_min);
  s.get("p_max", env.p_max);
  s.get("model_floor_min", env.model_floor_min);
  s.get("model_floor_max", env.model_floor_max);
  s.get("violation_fraction", env.violation_fraction);
  s.get("noise_scale", env.noise_scale);
  s.get("user_dim", env.user_dim);
  s.get("context_dim", env.context_dim);
  s.get_seed("seed", env.seed);
  s.finish();
}

json env_to_json(const EnvConfig& env) {
  return {
      {"actions",
       {{"channel_count", env.actions.channel_count},
        {"queue_buckets", env.actions.queue_buckets},
        {"queue_bucket_width", env.actions.queue_bucket_width},
        {"model_count", env.actions.model_count}}},
      {"costs",
       {{"channel_unit_costs", env.costs.channel_unit_costs},
        {"queue_cost_per_item", env.costs.queue_cost_per_item},
        {"model_costs", env.costs.model_costs}}},
      {"reward", {{"k1", env.reward.k1}, {"k2", env.reward.k2}}},
      {"train_requests", env.num_requests},
      {"num_slices", env.num_slices},
      {"traffic_profile", env.traffic_profile},
      {"traffic_amplitude", env.traffic_amplitude},
      {"p_min", env.p_min},
      {"p_max", env.p_max},
      {"model_floor_min", env.model_floor_min},
      {"model_floor_max", env.model_floor_max},
      {"violation_fraction", env.violation_fraction},
      {"noise_scale", env.noise_scale},
      {"user_dim", env.user_dim},
      {"context_dim", env.context_dim},
      {"seed", env.seed},
  };
}

void parse_train(Section s, TrainConfig& t) {
  std::string algo = algo_name(t.algo);
  s.get("algo", algo);
  t.algo = parse_algo(algo);
  s.get("iterations", t.iterations);
  s.get("batch_size", t.batch_size);
  s.get("lambda_updates", t.lambda_updates);
  s.get("lambda_lr", t.lambda_lr);
  s.get("gamma", t.gamma);
  s.get("learning_rate", t.learning_rate);
  s.get("target_sync", t.target_sync);
  s.get("bcq_tau", t.bcq_tau);
  s.get("rem_heads", t.rem_heads);
  s.get("hidden", t.hidden);
  s.get("adaptive_lambda", t.adaptive_lambda);
  s.get("eval_interval", t.eval_interval);
  s.get_seed("seed", t.seed);
  s.finish();
}

json train_to_json(const TrainConfig& t) {
  return {{"algo", algo_name(t.algo)},
          {"iterations", t.iterations},
          {"batch_size", t.batch_size},
          {"lambda_updates", t.lambda_updates},
          {"lambda_lr", t.lambda_lr},
          {"gamma", t.gamma},
          {"learning_rate", t.learning_rate},
          {"target_sync", t.target_sync},
          {"bcq_tau", t.bcq_tau},
          {"rem_heads", t.rem_heads},
          {"hidden", t.hidden},
          {"adaptive_lambda", t.adaptive_lambda},
          {"eval_interval", t.eval_interval},
          {"seed", t.seed}};
}

void parse_cem(Section s, CemConfig& c, int& requests) {
  s.get("iterations", c.iterations);
  s.get("samples", c.samples);
  s.get("retain", c.retain);
  s.get("init_mu", c.init_mu);
  s.get("init_sigma", c.init_sigma);
  s.get("sigma_floor", c.sigma_floor);
  s.get("penalty", c.penalty);
  s.get("requests", requests);
  s.get_seed("seed", c.seed);
  s.finish();
}

void parse_serving(Section s, StreamConfig& sc) {
  s.get("slices", sc.slices);
  s.get("ticks_per_slice", sc.ticks_per_slice);
  s.get("slice_seconds", sc.slice_seconds);
  s.get("load_smoothing", sc.load_smoothing);
  s.get("control_enabled", sc.control_enabled);
  s.get("refresh_every", sc.refresh_every);
  s.get("noisy", sc.noisy);
  auto p = s.child("pid");
  p.get("kp", sc.pid.kp);
  p.get("ki", sc.pid.ki);
  p.get("kd", sc.pid.kd);
  p.get("setpoint", sc.pid.setpoint);
  p.get("out_min", sc.pid.out_min);
  p.get("out_max", sc.pid.out_max);
  p.get("integral_limit", sc.pid.integral_limit);
  p.get("sample_period", sc.pid.sample_period);
  p.finish();
  auto c = s.child("clamp");
  c.get("model_threshold", sc.clamp.model_threshold);
  c.get("recovery_rate", sc.clamp.recovery_rate);
  c.finish();
  auto k = s.child("spike");
  k.get("first_visit", sc.spike.first_visit);
  k.get("visits", sc.spike.visits);
  k.get("factor", sc.spike.factor);
  k.finish();
  s.finish();
}

json serving_to_json(const StreamConfig& sc) {
  return {{"slices", sc.slices},
          {"ticks_per_slice", sc.ticks_per_slice},
          {"slice_seconds", sc.slice_seconds},
          {"load_smoothing", sc.load_smoothing},
          {"control_enabled", sc.control_enabled},
          {"refresh_every", sc.refresh_every},
          {"noisy", sc.noisy},
          {"pid",
           {{"kp", sc.pid.kp},
            {"ki", sc.pid.ki},
            {"kd", sc.pid.kd},
            {"setpoint", sc.pid.setpoint},
            {"out_min", sc.pid.out_min},
            {"out_max", sc.pid.out_max},
            {"integral_limit", sc.pid.integral_limit},
            {"sample_period", sc.pid.sample_period}}},
          {"clamp", {{"model_threshold", sc.clamp.model_threshold}, {"recovery_rate", sc.clamp.recovery_rate}}},
          {"spike",
           {{"first_visit", sc.spike.first_visit}, {"visits", sc.spike.visits}, {"factor", sc.spike.factor}}}};
}

std::string format_number(double v, int precision) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  env.validate();
  train.validate();
  cem.validate();
  static_rule.validate(env.actions);
  if (eval_requests <= 0) throw ConfigError("eval_requests must be positive");
  if (cem_requests <= 0) throw ConfigError("cem.requests must be positive");
  if (!(behavior.random_fraction >= 0.0 && behavior.random_fraction <= 1.0)) {
    throw ConfigError("behavior.random_fraction must be in [0, 1]");
  }
  if (!(correction.tolerance > 0.0)) throw ConfigError("correction.tolerance must be positive");
  if (correction.max_probes < 2) throw ConfigError("correction.max_probes must be at least 2");
  if (correction.grid_points < 2) throw ConfigError("correction.grid_points must be at least 2");
  if (!(correction.initial_upper > 0.0)) throw ConfigError("correction.initial_upper must be positive");
  serving.pid.validate();
  if (serving.ticks_per_slice <= 0) throw ConfigError("serving.ticks_per_slice must be positive");
  if (!(serving.load_smoothing > 0.0 && serving.load_smoothing <= 1.0)) {
    throw ConfigError("serving.load_smoothing must be in (0, 1]");
  }
  if (!(serving.slice_seconds > 0.0)) throw ConfigError("serving.slice_seconds must be positive");
  if (serving.refresh_every < 0) throw ConfigError("serving.refresh_every must be non-negative");
  if (!(serving.spike.factor >= 1.0) || serving.spike.visits < 1) {
    throw ConfigError("serving.spike needs factor >= 1 and visits >= 1");
  }
  for (int s : serving.slices) {
    if (s < 0 || s >= env.num_slices) throw ConfigError("serving.slices entry out of range");
  }
  if (sweep.alphas.empty() || sweep.rounds.empty()) throw ConfigError("sweep grids must be non-empty");
  for (double a : sweep.alphas) {
    if (!(a > 0.0)) throw ConfigError("sweep.alphas must be positive");
  }
  for (int k : sweep.rounds) {
    if (k < 1) throw ConfigError("sweep.rounds must be at least 1");
  }
  if (expert_return && !std::isfinite(*expert_return)) throw ConfigError("expert_return must be finite");
}

void ExperimentConfig::apply_seed(std::uint64_t seed) {
  env.seed = hash_combine(seed, 1);
  eval_seed = hash_combine(seed, 2);
  train.seed = hash_combine(seed, 3);
  cem.seed = hash_combine(seed, 4);
  behavior.seed = hash_combine(seed, 5);
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "");
  parse_env(root.child("env"), cfg.env);
  root.get("eval_requests", cfg.eval_requests);
  root.get_seed("eval_seed", cfg.eval_seed);
  auto sr = root.child("static_rule");
  sr.get("channel_strategy", cfg.static_rule.channel_strategy);
  sr.get("queue_bucket", cfg.static_rule.queue_bucket);
  sr.get("model", cfg.static_rule.model);
  sr.finish();
  auto b = root.child("behavior");
  b.get("random_fraction", cfg.behavior.random_fraction);
  b.get("use_cem", cfg.behavior.use_cem);
  b.get_seed("seed", cfg.behavior.seed);
  b.finish();
  parse_train(root.child("train"), cfg.train);
  parse_cem(root.child("cem"), cfg.cem, cfg.cem_requests);
  auto c = root.child("correction");
  c.get("tolerance", cfg.correction.tolerance);
  c.get("max_probes", cfg.correction.max_probes);
  c.get("initial_upper", cfg.correction.initial_upper);
  c.get("grid_points", cfg.correction.grid_points);
  c.get("grid_fallback", cfg.correction.grid_fallback);
  c.finish();
  parse_serving(root.child("serving"), cfg.serving);
  auto sw = root.child("sweep");
  sw.get("alphas", cfg.sweep.alphas);
  sw.get("rounds", cfg.sweep.rounds);
  sw.finish();
  if (root.has("expert_return")) {
    double v = 0.0;
    root.get("expert_return", v);
    cfg.expert_return = v;
  }
  if (root.has("seed")) {
    std::uint64_t seed = 0;
    root.get_seed("seed", seed);
    cfg.apply_seed(seed);
  }
  root.finish();
  cfg.serving.clamp.queue_buckets = cfg.env.actions.queue_buckets;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

json config_to_json(const ExperimentConfig& cfg) {
  json doc = {
      {"env", env_to_json(cfg.env)},
      {"eval_requests", cfg.eval_requests},
      {"eval_seed", cfg.eval_seed},
      {"static_rule",
       {{"channel_strategy", cfg.static_rule.channel_strategy},
        {"queue_bucket", cfg.static_rule.queue_bucket},
        {"model", cfg.static_rule.model}}},
      {"behavior",
       {{"random_fraction", cfg.behavior.random_fraction},
        {"use_cem", cfg.behavior.use_cem},
        {"seed", cfg.behavior.seed}}},
      {"train", train_to_json(cfg.train)},
      {"cem",
       {{"iterations", cfg.cem.iterations},
        {"samples", cfg.cem.samples},
        {"retain", cfg.cem.retain},
        {"init_mu", cfg.cem.init_mu},
        {"init_sigma", cfg.cem.init_sigma},
        {"sigma_floor", cfg.cem.sigma_floor},
        {"penalty", cfg.cem.penalty},
        {"requests", cfg.cem_requests},
        {"seed", cfg.cem.seed}}},
      {"correction",
       {{"tolerance", cfg.correction.tolerance},
        {"max_probes", cfg.correction.max_probes},
        {"initial_upper", cfg.correction.initial_upper},
        {"grid_points", cfg.correction.grid_points},
        {"grid_fallback", cfg.correction.grid_fallback}}},
      {"serving", serving_to_json(cfg.serving)},
      {"sweep", {{"alphas", cfg.sweep.alphas}, {"rounds", cfg.sweep.rounds}}},
  };
  if (cfg.expert_return) doc["expert_return"] = *cfg.expert_return;
  return doc;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(config_to_json(cfg).dump())));
  return buf;
}

void write_result_rows(const std::string& path, const std::vector<ResultRow>& rows, const std::string& hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# config_hash=" << hash << "\n";
  const size_t phases = rows.empty() ? 0 : rows.front().utilization.size();
  out << "method";
  for (size_t t = 0; t < phases; ++t) out << ",utilization_" << t;
  out << ",return,normalized_score\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.method;
    for (double u : r.utilization) out << "," << u;
    out << "," << r.ret << ",";
    if (std::isnan(r.normalized)) {
      out << "nan";
    } else {
      out << r.normalized;
    }
    out << "\n";
  }
}

std::string render_result_table(const std::vector<ResultRow>& rows) {
  const size_t phases = rows.empty() ? 0 : rows.front().utilization.size();
  std::vector<std::string> header{"method"};
  for (size_t t = 0; t < phases; ++t) header.push_back("cost_" + std::to_string(t) + " (%)");
  header.push_back("return");
  header.push_back("score");
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& r : rows) {
    std::vector<std::string> line{r.method};
    for (double u : r.utilization) line.push_back(format_number(100.0 * u, 1));
    line.push_back(format_number(r.ret, 1));
    line.push_back(format_number(r.normalized, 1));
    cells.push_back(std::move(line));
  }
  std::vector<size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream os;
  for (size_t i = 0; i < cells.size(); ++i) {
    for (size_t c = 0; c < cells[i].size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << cells[i][c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << cells[i][c];
      }
    }
    os << "\n";
    if (i == 0) {
      size_t total = 0;
      for (size_t w : width) total += w + 2;
      os << std::string(total - 2, '-') << "\n";
    }
  }
  return os.str();
}

BudgetSpec static_budgets(const EvalResult& static_eval, int num_slices) {
  const int phases = static_cast<int>(static_eval.phase_cost.size());
  if (static_eval.requests <= 0) throw ConfigError("static budgets need a non-empty request set");
  std::vector<double> table(static_cast<size_t>(num_slices) * phases);
  for (int s = 0; s < num_slices; ++s) {
    const bool visited = s < static_cast<int>(static_eval.slice_requests.size()) && static_eval.slice_requests[s] > 0;
    for (int t = 0; t < phases; ++t) {
      double b = visited ? static_eval.slice_cost[s][t] : static_eval.phase_cost[t] / static_eval.requests;
      table[static_cast<size_t>(s) * phases + t] = b;
    }
  }
  return BudgetSpec(phases, num_slices, std::move(table));
}

Experiment::Experiment(ExperimentConfig cfg)
    : cfg_(std::move(cfg)), hash_(config_hash(cfg_)), sim_(cfg_.env), encoder_(cfg_.env) {
  cfg_.validate();
  train_set_ = generate_dataset(cfg_.env);
  EnvConfig eval_env = cfg_.env;
  eval_env.seed = cfg_.eval_seed;
  eval_env.num_requests = cfg_.eval_requests;
  eval_set_ = generate_dataset(eval_env);
}

void Experiment::set_datasets(std::vector<SyntheticRequest> train_set, std::vector<SyntheticRequest> eval_set) {
  train_set_ = std::move(train_set);
  eval_set_ = std::move(eval_set);
  static_eval_.reset();
  budgets_.reset();
  cem_.reset();
}

const EvalResult& Experiment::static_eval() {
  if (!static_eval_) {
    StaticPolicy policy(cfg_.static_rule);
    static_eval_ = evaluate_policy(sim_, policy, eval_set_);
  }
  return *static_eval_;
}

const BudgetSpec& Experiment::budgets() {
  if (!budgets_) budgets_ = static_budgets(static_eval(), cfg_.env.num_slices);
  return *budgets_;
}

std::vector<double> Experiment::train_rates() {
  StaticPolicy policy(cfg_.static_rule);
  return cost_rates(evaluate_policy(sim_, policy, train_set_));
}

const CemPolicyResult& Experiment::cem() {
  if (!cem_) {
    const size_t n = std::min(train_set_.size(), static_cast<size_t>(cfg_.cem_requests));
    std::span<const SyntheticRequest> subset(train_set_.data(), n);
    StaticPolicy policy(cfg_.static_rule);
    const EvalResult anchor = evaluate_policy(sim_, policy, subset);
    cem_ = cem_train(cfg_.cem, sim_, encoder_, subset, anchor.phase_cost);
  }
  return *cem_;
}

std::vector<TransitionRecord> Experiment::collect() {
  BehaviorMix mix;
  mix.random_fraction = cfg_.behavior.random_fraction;
  mix.seed = cfg_.behavior.seed;
  std::optional<LinearPolicy> cem_policy;
  std::optional<StaticPolicy> static_policy;
  if (mix.random_fraction < 1.0) {
    if (cfg_.behavior.use_cem) {
      cem_policy.emplace(cem().params, encoder_);
      mix.superior = &*cem_policy;
      mix.superior_tag = "cem";
    } else {
      static_policy.emplace(cfg_.static_rule);
      mix.superior = &*static_policy;
      mix.superior_tag = "static";
    }
  }
  return collect_behavior_data(sim_, train_set_, mix);
}

MethodRun Experiment::run_method(const TrainConfig& train_cfg, const std::vector<TransitionRecord>& records) {
  MethodRun run;
  run.name = algo_name(train_cfg.algo) + (train_cfg.adaptive_lambda ? "+lambda" : "");
  const TrainingData data = prepare_training_data(records, encoder_, cfg_.env.actions);
  EvalContext ctx{&sim_, &encoder_, eval_set_, static_eval().phase_cost};
  run.training = train(data, train_cfg, train_rates(), &ctx);
  QNetwork net(run.training.params);
  QPolicy policy(net, encoder_, LambdaTable(run.training.lambda), QPolicyOptions{train_cfg.bcq_tau});
  run.uncorrected = evaluate_policy(sim_, policy, eval_set_);
  CorrectionOptions opts{cfg_.correction, QPolicyOptions{train_cfg.bcq_tau}};
  run.correction = correct_all(net, encoder_, sim_, eval_set_, budgets(), run.training.lambda, opts);
  return run;
}

MethodRun Experiment::run_method(const TrainConfig& train_cfg) { return run_method(train_cfg, collect()); }

CorrectionResult Experiment::correct(const QNetwork& net, const LambdaVector& initial) {
  CorrectionOptions opts{cfg_.correction, QPolicyOptions{cfg_.train.bcq_tau}};
  return correct_all(net, encoder_, sim_, eval_set_, budgets(), initial, opts);
}

EvalResult Experiment::evaluate(const Policy& policy) const { return evaluate_policy(sim_, policy, eval_set_); }

ResultRow Experiment::row(const std::string& method, const EvalResult& eval) {
  ResultRow r;
  r.method = method;
  const auto& anchor = static_eval();
  for (size_t t = 0; t < eval.phase_cost.size(); ++t) r.utilization.push_back(eval.phase_cost[t] / anchor.phase_cost[t]);
  r.ret = eval.total_return;
  if (eval.total_return == anchor.total_return) {
    r.normalized = 0.0;
  } else if (cfg_.expert_return) {
    r.normalized = normalized_score(eval.total_return, anchor.total_return, *cfg_.expert_return);
  } else {
    r.normalized = std::nan("");
  }
  return r;
}

std::vector<DcafResult> Experiment::dcaf() {
  return dcaf_by_slice(eval_set_, budgets(), cfg_.static_rule, cfg_.env.reward, cfg_.correction);
}

}  // namespace mpca
