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

// Comparison policies: a fixed rule per phase, a single-phase Lagrangian
// allocator on the queue phase, and cross-entropy search over linear
// policies with a large penalty on budget overruns.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpca/core.hpp"
#include "mpca/lambda_correct.hpp"
#include "mpca/policy.hpp"
#include "mpca/simenv.hpp"

namespace mpca {

struct StaticRule {
  int channel_strategy = 2;  // first channel only
  int queue_bucket = 12;
  int model = 1;

  int action(int phase) const;
  void validate(const ActionSpaceSpec& spec) const;
};

class StaticPolicy final : public Policy {
 public:
  explicit StaticPolicy(StaticRule rule) : rule_(rule) {}
  void decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const override;

 private:
  StaticRule rule_;
};

/// Per-phase weight vectors over the shared state encoding, stored flat and
/// phase-major so the whole vector can be searched as one point.
struct LinearPolicyParams {
  int feature_dim = 0;
  std::vector<int> action_sizes;
  std::vector<double> theta;

  LinearPolicyParams() = default;
  LinearPolicyParams(int feature_dim, std::vector<int> action_sizes);
  int size() const { return static_cast<int>(theta.size()); }
  std::span<const double> phase_weights(int phase) const;
};

/// Clamped affine rounding: floor((N - 1) / 2 + score + 0.5) limited to [0, N).
int score_to_action(double score, int num_actions);
int linear_act(const LinearPolicyParams& params, std::span<const double> features, int phase);

class LinearPolicy final : public Policy {
 public:
  LinearPolicy(LinearPolicyParams params, const StateEncoder& encoder);
  void decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const override;

 private:
  LinearPolicyParams params_;
  const StateEncoder& encoder_;
};

struct CemConfig {
  int iterations = 30;
  int samples = 64;  // N_sample
  int retain = 8;    // N_retain
  double init_mu = 0.0;
  double init_sigma = 0.5;
  double sigma_floor = 0.0;  // added to refit sigma to keep exploring
  double penalty = 1e8;      // lambda_t for every phase
  std::uint64_t seed = 1;

  void validate() const;
};

struct CemScore {
  double reward = 0.0;      // what the search ranks by
  double raw_return = 0.0;  // unpenalized value
  bool feasible = true;
};

using CemObjective = std::function<CemScore(std::span<const double>)>;

struct CemIteration {
  int iteration = 0;
  double best_reward = 0.0;        // best sample this iteration
  double elite_mean_reward = 0.0;  // mean reward of the retained elites
  double mu_norm = 0.0;
  double sigma_norm = 0.0;
};

struct CemResult {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<double> best_theta;  // best-ever feasible sample by raw return
  CemScore best_score;
  bool found_feasible = false;
  std::vector<CemIteration> history;
};

/// Diagonal-Gaussian cross-entropy search. Candidates are scored in
/// parallel; elite selection and refitting are sequential and deterministic.
CemResult cem_search(const CemConfig& cfg, int dim, const CemObjective& objective);

/// Value - sum_t penalty * max(cost_t - budget_t, 0).
double cem_penalized_reward(double value, std::span<const double> costs, std::span<const double> budgets,
                            double penalty);

struct CemPolicyResult {
  LinearPolicyParams params;
  CemResult search;
  EvalResult eval;  // of the returned parameters on the training set
};

/// Trains a linear policy against whole-set budgets on `train_set`.
CemPolicyResult cem_train(const CemConfig& cfg, const Simulator& sim, const StateEncoder& encoder,
                          std::span<const SyntheticRequest> train_set, std::span<const double> budgets);

struct DcafResult {
  double lambda = 0.0;
  double budget = 0.0;
  double queue_cost = 0.0;
  double value = 0.0;  // total reward of the allocation
  std::unordered_map<std::uint64_t, int> queue_actions;
  BisectionResult search;
};

/// Per-request queue bucket argmax(Value - lambda * Cost) with the channel and
/// model fixed by `rule`; one lambda found by bisection on the total queue cost.
DcafResult dcaf_allocate(std::span<const SyntheticRequest> requests, double queue_budget, const StaticRule& rule,
                         const RewardWeights& weights, const BisectionOptions& opts = {});

/// Runs dcaf_allocate per time slice of `budgets` (or once for a single-slice table).
std::vector<DcafResult> dcaf_by_slice(std::span<const SyntheticRequest> requests, const BudgetSpec& budgets,
                                      const StaticRule& rule, const RewardWeights& weights,
                                      const BisectionOptions& opts = {});

class DcafPolicy final : public Policy {
 public:
  DcafPolicy(StaticRule rule, std::span<const DcafResult> allocations);
  void decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const override;

 private:
  StaticRule rule_;
  std::unordered_map<std::uint64_t, int> queue_actions_;
};

}  // namespace mpca
