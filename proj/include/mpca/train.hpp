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

// Offline training of the multi-phase Q-network with the adaptive-lambda
// inner loop. Three variants share one loop: double DQN, discrete BCQ
// (imitation heads mask unlikely actions) and REM (random convex head
// mixtures per mini-batch).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mpca/core.hpp"
#include "mpca/lambda_correct.hpp"
#include "mpca/policy.hpp"
#include "mpca/qnet.hpp"
#include "mpca/simenv.hpp"

namespace mpca {

enum class Algo { kDdqn, kBcq, kRem };

Algo parse_algo(const std::string& name);
std::string algo_name(Algo algo);

struct TransitionRecord {
  PhaseState state;
  int action = 0;
  double reward = 0.0;  // zero unless `next` is terminal
  PhaseState next;
  bool terminal = false;
  double cost = 0.0;  // action_cost(state, action)
  int phase = 0;
  std::string behavior;

  bool operator==(const TransitionRecord&) const = default;
};

struct BehaviorMix {
  double random_fraction = 1.0;      // share of requests run by the uniform policy
  const Policy* superior = nullptr;  // handles the remaining requests
  std::string superior_tag = "cem";
  std::uint64_t seed = 1;
  bool noisy_rewards = true;
};

/// Exactly num_phases transitions per request, in request order.
std::vector<TransitionRecord> collect_behavior_data(const Simulator& sim, std::span<const SyntheticRequest> requests,
                                                    const BehaviorMix& mix);

void write_transitions(const std::string& path, std::span<const TransitionRecord> records,
                       const std::string& config_hash = "");
std::vector<TransitionRecord> read_transitions(const std::string& path);

struct TrainConfig {
  Algo algo = Algo::kDdqn;
  int iterations = 20000;
  int batch_size = 8192;
  int lambda_updates = 10;  // K
  double lambda_lr = 0.1;   // alpha
  double gamma = 0.99;
  double learning_rate = 3e-4;
  int target_sync = 100;
  double bcq_tau = 0.3;
  int rem_heads = 64;
  std::vector<int> hidden{128, 64};
  bool adaptive_lambda = true;
  int eval_interval = 5000;
  std::uint64_t seed = 1;

  void validate() const;
};

/// r + gamma * Q'(s', a') with a' = argmax over the online net's calibrated
/// values; `terminal` returns r.
double ddqn_target(double reward, bool terminal, double gamma, std::span<const double> q_online_next,
                   std::span<const double> q_target_next, std::span<const double> next_costs, double lambda_next,
                   std::span<const unsigned char> mask = {});

/// max(0, lambda + alpha * (batch_cost / budget - 1)); a non-positive budget
/// leaves lambda unchanged.
double adaptive_lambda_step(double lambda, double batch_cost, double budget, double alpha);

/// Per-request budget rate times the number of phase-t states.
double batch_budget(double rate, int count);

/// Scores of one phase's batch rows for the inner loop.
struct LambdaPhaseBatch {
  Matrix q;                                       // rows x N_t
  std::vector<std::vector<double>> costs;         // per row
  std::vector<std::vector<unsigned char>> masks;  // empty, or one per row
  double budget = 0.0;

  /// Summed cost and q-value of the greedy actions under `lambda`.
  std::pair<double, double> greedy_totals(double lambda) const;
};

/// K rounds: re-select greedy actions under the current lambda in every
/// phase, then update every phase with adaptive_lambda_step.
LambdaVector inner_lambda_loop(LambdaVector lambda, std::span<const LambdaPhaseBatch> batches, int rounds,
                               double alpha);

/// Transitions encoded once for fast batch sampling.
struct TrainingData {
  int dim = 0;
  std::vector<int> action_sizes;
  Matrix states;
  Matrix next_states;         // rows for non-terminal transitions
  std::vector<int> next_row;  // index into next_states, -1 when terminal
  std::vector<int> phase;
  std::vector<int> action;
  std::vector<double> reward;
  std::vector<std::vector<double>> costs;       // action costs at s_t
  std::vector<std::vector<double>> next_costs;  // action costs at s_{t+1}

  int size() const { return static_cast<int>(phase.size()); }
};

TrainingData prepare_training_data(std::span<const TransitionRecord> records, const StateEncoder& encoder,
                                   const ActionSpaceSpec& actions);

/// Per-request cost rate per phase of a policy on a request set, e.g. the
/// static rule's rate used as the training budget.
std::vector<double> cost_rates(const EvalResult& eval);

struct TelemetryRow {
  long step = 0;
  int phase = 0;
  double utilization = 0.0;
  double ret = 0.0;
  double lambda = 0.0;
  double loss = 0.0;
};

struct EvalContext {
  const Simulator* sim = nullptr;
  const StateEncoder* encoder = nullptr;
  std::span<const SyntheticRequest> eval_set;
  std::vector<double> budgets;  // whole-set budget per phase
};

struct TrainResult {
  QNetworkParams params;
  LambdaVector lambda;
  std::vector<TelemetryRow> telemetry;
  double final_loss = 0.0;
  long target_syncs = 0;
  double seconds = 0.0;
};

using EvalCallback = std::function<void(long step, const QNetwork& net, const LambdaVector& lambda)>;

TrainResult train(const TrainingData& data, const TrainConfig& cfg, std::span<const double> budget_rates,
                  const EvalContext* eval = nullptr, const EvalCallback& on_eval = {});

void write_telemetry(const std::string& path, std::span<const TelemetryRow> rows, const std::string& config_hash);

}  // namespace mpca
