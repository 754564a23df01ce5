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

// Synthetic three-phase cascade (channel -> queue -> model) with ground-truth
// value and cost tables per request.
//
// Joint value of a decision path is v * g_0(a_0) * g_1(a_1) * g_2(a_2), where
// each g_t is a concave power curve in that phase's cost normalised so the
// costliest action has g_t = 1. The per-phase table Value_t(a) = v * g_t(a) is
// therefore the request's value when every other phase takes its richest
// action.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mpca/core.hpp"

namespace mpca {

struct CostModel {
  std::vector<double> channel_unit_costs{1.0, 0.8};  // one per channel, MSB first
  double queue_cost_per_item = 0.01;
  std::vector<double> model_costs{0.0, 0.5, 1.0};  // simple ... complex
};

struct EnvConfig {
  ActionSpaceSpec actions{.num_phases = 3, .channel_count = 2, .queue_buckets = 26,
                          .queue_bucket_width = 10, .model_count = 3};
  CostModel costs;
  int num_requests = 10000;
  int num_slices = 24;
  /// Relative traffic per slice. Empty means a daily sinusoid with
  /// amplitude `traffic_amplitude`.
  std::vector<double> traffic_profile;
  double traffic_amplitude = 0.5;
  double p_min = 0.2;  // value-curve exponent range, inside (0, 1)
  double p_max = 0.9;
  double model_floor_min = 0.5;  // g for the cheapest model
  double model_floor_max = 0.85;
  double violation_fraction = 0.0;  // rho
  double noise_scale = 0.1;         // half-width of the mean-one revenue noise
  int user_dim = 4;
  int context_dim = 3;
  RewardWeights reward;
  std::uint64_t seed = 7;

  void validate() const;
  /// Normalised traffic weights, one per slice.
  std::vector<double> slice_weights() const;
  /// Cost grid of one phase, indexed by action.
  std::vector<double> phase_costs(int phase) const;
};

struct SyntheticRequest {
  std::uint64_t id = 0;
  int slice = 0;
  std::vector<double> user;
  std::vector<double> context;
  double value_scale = 0.0;  // v
  double fee_share = 0.0;    // fraction of revenue that is advertising fee
  std::vector<std::vector<double>> value;  // [phase][action] = v * g_t(a)
  std::vector<std::vector<double>> cost;   // [phase][action]
  std::vector<int> pool_sizes;             // ads per retrieval channel
  std::uint64_t noise_seed = 0;

  int num_phases() const { return static_cast<int>(value.size()); }
  /// g_t(a): the multiplicative factor of one phase decision.
  double factor(int phase, int action) const;
  /// Noise-free fee_ad + price_o of a complete path.
  double joint_value(std::span<const int> path) const;
  /// Reward-weight of one revenue unit: k1 * fee_share + k2 * (1 - fee_share).
  double reward_scale(const RewardWeights& w) const;
  double joint_reward(std::span<const int> path, const RewardWeights& w) const {
    return joint_value(path) * reward_scale(w);
  }
  RevenueOutcome outcome(std::span<const int> path, double noise_scale) const;

  bool operator==(const SyntheticRequest&) const = default;
};

struct ListSummary {
  double retrieved = 0.0;   // ads returned by the selected channels
  double truncated = 0.0;   // ads kept after truncation
  double score_mean = 0.0;  // quality of the current list
  double score_max = 0.0;   // quality of the retrieved pool

  bool operator==(const ListSummary&) const = default;
};

struct PhaseState {
  int phase = 0;  // 0-based; == num_phases when terminal
  std::uint64_t request_id = 0;
  int slice = 0;
  std::vector<double> user;
  std::vector<double> context;
  ListSummary summary;
  std::vector<int> history;           // decisions of phases 0 .. phase-1
  std::vector<double> action_costs;   // cost of every action at this phase

  bool operator==(const PhaseState&) const = default;
};

struct StepResult {
  PhaseState next;
  std::optional<RevenueOutcome> outcome;  // set when `next` is terminal
};

struct AssumptionCheck {
  bool value_monotone = true;  // Value non-decreasing in Cost
  bool ratio_monotone = true;  // Value / Cost non-increasing in Cost
  bool ok() const { return value_monotone && ratio_monotone; }
};

std::vector<SyntheticRequest> generate_dataset(const EnvConfig& cfg);

/// Requests for one slice, e.g. for streaming scenarios. Ids start at
/// `first_id`; deterministic in (cfg.seed, slice, first_id, count).
std::vector<SyntheticRequest> generate_slice(const EnvConfig& cfg, int slice, int count,
                                             std::uint64_t first_id);

std::vector<AssumptionCheck> check_assumptions(const SyntheticRequest& req);
bool conforms(const SyntheticRequest& req);

class Simulator {
 public:
  explicit Simulator(EnvConfig cfg);

  const EnvConfig& config() const { return cfg_; }
  int num_phases() const { return cfg_.actions.num_phases; }

  PhaseState initial_state(const SyntheticRequest& req) const;
  /// Advances one phase. Revenue noise is applied only when `noisy`.
  StepResult step(const SyntheticRequest& req, const PhaseState& state, int action,
                   bool noisy = false) const;

 private:
  EnvConfig cfg_;
};

/// Cost of `action` at `state`; independent of earlier or later decisions.
double action_cost(const PhaseState& state, int action);

/// Fixed-length feature vector:
/// [user | context | one-hot slice | list summary | one-hot history | one-hot phase].
class StateEncoder {
 public:
  explicit StateEncoder(const EnvConfig& cfg);

  int dim() const { return dim_; }
  void encode(const PhaseState& state, std::span<double> out) const;
  std::vector<double> encode(const PhaseState& state) const;

 private:
  int user_dim_, context_dim_, num_slices_, num_phases_;
  std::vector<int> history_sizes_;
  int dim_ = 0;
};

/// One JSON object per line; a non-empty hash goes first as its own record.
void write_dataset(const std::string& path, std::span<const SyntheticRequest> requests,
                   const std::string& config_hash = "");
std::vector<SyntheticRequest> read_dataset(const std::string& path);

}  // namespace mpca
