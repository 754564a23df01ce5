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

#pragma once

// Experiment wiring shared by the command-line tool and the acceptance
// runner: one JSON config, deterministic datasets, static-anchored budgets
// and the train -> correct -> evaluate chain.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpca/baselines.hpp"
#include "mpca/lambda_correct.hpp"
#include "mpca/serving.hpp"
#include "mpca/simenv.hpp"
#include "mpca/train.hpp"

namespace mpca {

struct BehaviorConfig {
  double random_fraction = 0.5;
  bool use_cem = true;  // the non-random share is served by the CEM policy
  std::uint64_t seed = 5;
};

struct SweepConfig {
  std::vector<double> alphas{0.001, 0.01, 0.05, 0.1, 0.5, 1.0};
  std::vector<int> rounds{1, 5, 10, 15, 20, 30};  // K
};

struct ExperimentConfig {
  EnvConfig env;  // env.seed and env.num_requests describe the training set
  int eval_requests = 10000;
  std::uint64_t eval_seed = 8;
  StaticRule static_rule;
  BehaviorConfig behavior;
  TrainConfig train;
  CemConfig cem;
  int cem_requests = 2000;  // leading training requests used by the CEM search
  BisectionOptions correction;
  StreamConfig serving;  // replay and requests_per_slice are filled at run time
  SweepConfig sweep;
  std::optional<double> expert_return;  // normalized-score anchor (score 100)

  void validate() const;
  /// Reseeds every stochastic stage from one root seed.
  void apply_seed(std::uint64_t seed);
};

/// Strict parse: unknown keys and out-of-range values raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
/// Fully resolved config; parsing it back yields an identical config.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string config_hash(const ExperimentConfig& cfg);

/// One row of a result table. Utilization is realized cost over budget.
struct ResultRow {
  std::string method;
  std::vector<double> utilization;
  double ret = 0.0;
  double normalized = 0.0;  // NaN without an expert anchor
};

void write_result_rows(const std::string& path, const std::vector<ResultRow>& rows, const std::string& hash);
std::string render_result_table(const std::vector<ResultRow>& rows);

/// Per-slice budgets from the static rule's realized cost. Slices the set
/// does not visit get one request's worth of static cost so that every
/// entry stays positive.
BudgetSpec static_budgets(const EvalResult& static_eval, int num_slices);

/// Outcome of training one learned method end to end.
struct MethodRun {
  std::string name;
  TrainResult training;
  CorrectionResult correction;
  EvalResult uncorrected;  // trained lambda used globally
};

class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const std::string& hash() const { return hash_; }
  const Simulator& sim() const { return sim_; }
  const StateEncoder& encoder() const { return encoder_; }
  const std::vector<SyntheticRequest>& train_set() const { return train_set_; }
  const std::vector<SyntheticRequest>& eval_set() const { return eval_set_; }
  void set_datasets(std::vector<SyntheticRequest> train_set, std::vector<SyntheticRequest> eval_set);

  const EvalResult& static_eval();
  const BudgetSpec& budgets();
  std::vector<double> train_rates();

  const CemPolicyResult& cem();
  std::vector<TransitionRecord> collect();
  MethodRun run_method(const TrainConfig& train_cfg, const std::vector<TransitionRecord>& records);
  MethodRun run_method(const TrainConfig& train_cfg);

  CorrectionResult correct(const QNetwork& net, const LambdaVector& initial);
  EvalResult evaluate(const Policy& policy) const;
  ResultRow row(const std::string& method, const EvalResult& eval);

  std::vector<DcafResult> dcaf();

 private:
  ExperimentConfig cfg_;
  std::string hash_;
  Simulator sim_;
  StateEncoder encoder_;
  std::vector<SyntheticRequest> train_set_;
  std::vector<SyntheticRequest> eval_set_;
  std::optional<EvalResult> static_eval_;
  std::optional<BudgetSpec> budgets_;
  std::optional<CemPolicyResult> cem_;
};

}  // namespace mpca
