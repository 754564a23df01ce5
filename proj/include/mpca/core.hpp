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

// Domain types shared by every stage of the allocation pipeline.
//
// Phases are 0-based throughout the code base: phase 0 is the Elastic
// Channel decision, 1 the Elastic Queue, 2 the Elastic Model. A state whose
// phase equals num_phases is terminal.

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpca {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kChannelPhase = 0;
inline constexpr int kQueuePhase = 1;
inline constexpr int kModelPhase = 2;

struct ActionSpaceSpec {
  int num_phases = 3;
  int channel_count = 1;  // N_r; N_c = 2^N_r strategies
  int queue_buckets = 26;
  int queue_bucket_width = 10;
  int model_count = 2;

  int channel_strategies() const { return 1 << channel_count; }
  int phase_size(int phase) const;
  std::vector<int> phase_sizes() const;
  void validate() const;

  bool operator==(const ActionSpaceSpec&) const = default;
};

/// Big-endian binary value of a retrieval indicator: the first channel is the
/// most significant bit, so (0,1,1) maps to 3.
int strategy_number(std::span<const int> indicator, int channel_count);

/// Inverse of strategy_number.
std::vector<int> strategy_indicator(int number, int channel_count);

/// Truncation length (items) for a queue bucket; buckets are 1-indexed
/// lengths so bucket 0 keeps queue_bucket_width items.
int queue_action_length(const ActionSpaceSpec& spec, int bucket_index);

struct RewardWeights {
  double k1 = 1.0;  // advertising fee
  double k2 = 1.0;  // order price
  void validate() const;
};

struct RevenueOutcome {
  double fee_ad = 0.0;
  double price_o = 0.0;
};

double reward(const RevenueOutcome& outcome, const RewardWeights& w);

/// Per-phase capacity table with one row per time slice.
class BudgetSpec {
 public:
  BudgetSpec() = default;
  BudgetSpec(int num_phases, int num_slices, std::vector<double> table);

  /// Same capacity for every slice.
  static BudgetSpec uniform(std::span<const double> per_phase, int num_slices = 1);

  int num_phases() const { return num_phases_; }
  int num_slices() const { return num_slices_; }
  double at(int slice, int phase) const;
  double& at(int slice, int phase);
  /// Capacity summed over slices.
  double total(int phase) const;
  std::vector<double> totals() const;
  std::vector<double> slice_row(int slice) const;

 private:
  int num_phases_ = 0;
  int num_slices_ = 0;
  std::vector<double> table_;  // slice-major
};

struct CostReport {
  std::vector<double> utilization;  // realized / budget, per phase
  double total = 0.0;               // sum_t (realized_t / budget_t - 1)
};

CostReport cost_metric(std::span<const double> realized, std::span<const double> budgets);

double normalized_score(double score, double random_score, double expert_score);

/// Lagrange multipliers, one per phase. Entries are never negative.
class LambdaVector {
 public:
  LambdaVector() = default;
  explicit LambdaVector(int num_phases, double init = 0.0);
  explicit LambdaVector(std::vector<double> values);

  int size() const { return static_cast<int>(values_.size()); }
  double operator[](int phase) const { return values_.at(phase); }
  void set(int phase, double value);
  /// Applies lambda <- max(0, lambda + delta).
  void shift_clamped(int phase, double delta);
  std::span<const double> values() const { return values_; }

  bool operator==(const LambdaVector&) const = default;

 private:
  std::vector<double> values_;
};

/// Lambda vectors keyed by time slice.
class LambdaTable {
 public:
  LambdaTable() = default;
  explicit LambdaTable(LambdaVector global) { slices_.emplace(-1, std::move(global)); }

  void set(int slice, LambdaVector lambda) { slices_[slice] = std::move(lambda); }
  bool contains(int slice) const { return slices_.count(slice) > 0; }
  bool empty() const { return slices_.empty(); }
  /// Exact slice, else the global entry, else the nearest slice. `exact`
  /// reports whether the slice itself was present.
  const LambdaVector& lookup(int slice, bool* exact = nullptr) const;
  const std::map<int, LambdaVector>& entries() const { return slices_; }

 private:
  std::map<int, LambdaVector> slices_;  // key -1 is the slice-independent entry
};

}  // namespace mpca
