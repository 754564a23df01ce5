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

#include "mpca/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

namespace mpca {

int ActionSpaceSpec::phase_size(int phase) const {
  switch (phase) {
    case kChannelPhase: return channel_strategies();
    case kQueuePhase: return queue_buckets;
    case kModelPhase: return model_count;
    default: throw ConfigError("phase index out of range: " + std::to_string(phase));
  }
}

std::vector<int> ActionSpaceSpec::phase_sizes() const {
  std::vector<int> out;
  for (int t = 0; t < num_phases; ++t) out.push_back(phase_size(t));
  return out;
}

void ActionSpaceSpec::validate() const {
  if (num_phases != 3) throw ConfigError("num_phases must be 3 (channel, queue, model)");
  if (channel_count < 1 || channel_count > 20) throw ConfigError("channel_count must be in [1, 20]");
  if (queue_buckets < 1) throw ConfigError("queue_buckets must be >= 1");
  if (queue_bucket_width < 1) throw ConfigError("queue_bucket_width must be >= 1");
  if (model_count < 1) throw ConfigError("model_count must be >= 1");
}

int strategy_number(std::span<const int> indicator, int channel_count) {
  if (static_cast<int>(indicator.size()) != channel_count) {
    throw ConfigError("indicator length " + std::to_string(indicator.size()) +
                      " does not match channel count " + std::to_string(channel_count));
  }
  int value = 0;
  for (int bit : indicator) {
    if (bit != 0 && bit != 1) throw ConfigError("indicator entries must be 0 or 1");
    value = (value << 1) | bit;
  }
  return value;
}

std::vector<int> strategy_indicator(int number, int channel_count) {
  if (channel_count < 1 || number < 0 || number >= (1 << channel_count)) {
    throw ConfigError("strategy number out of range");
  }
  std::vector<int> bits(channel_count);
  for (int i = channel_count - 1; i >= 0; --i) {
    bits[i] = number & 1;
    number >>= 1;
  }
  return bits;
}

int queue_action_length(const ActionSpaceSpec& spec, int bucket_index) {
  if (bucket_index < 0 || bucket_index >= spec.queue_buckets) {
    throw ConfigError("queue bucket out of range: " + std::to_string(bucket_index));
  }
  return spec.queue_bucket_width * (bucket_index + 1);
}

void RewardWeights::validate() const {
  if (!(k1 >= 0.0) || !(k2 >= 0.0)) throw ConfigError("reward weights must be non-negative");
  if (k1 == 0.0 && k2 == 0.0) throw ConfigError("reward weights must not both be zero");
}

double reward(const RevenueOutcome& outcome, const RewardWeights& w) {
  return w.k1 * outcome.fee_ad + w.k2 * outcome.price_o;
}

BudgetSpec::BudgetSpec(int num_phases, int num_slices, std::vector<double> table)
    : num_phases_(num_phases), num_slices_(num_slices), table_(std::move(table)) {
  if (num_phases < 1 || num_slices < 1) throw ConfigError("budget table needs >= 1 phase and slice");
  if (table_.size() != static_cast<size_t>(num_phases) * num_slices) {
    throw ConfigError("budget table size mismatch");
  }
  for (double c : table_) {
    if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError("budgets must be positive and finite");
  }
}

BudgetSpec BudgetSpec::uniform(std::span<const double> per_phase, int num_slices) {
  std::vector<double> table;
  for (int s = 0; s < num_slices; ++s) table.insert(table.end(), per_phase.begin(), per_phase.end());
  return BudgetSpec(static_cast<int>(per_phase.size()), num_slices, std::move(table));
}

double BudgetSpec::at(int slice, int phase) const {
  return table_.at(static_cast<size_t>(slice) * num_phases_ + phase);
}

double& BudgetSpec::at(int slice, int phase) {
  return table_.at(static_cast<size_t>(slice) * num_phases_ + phase);
}

double BudgetSpec::total(int phase) const {
  double sum = 0.0;
  for (int s = 0; s < num_slices_; ++s) sum += at(s, phase);
  return sum;
}

std::vector<double> BudgetSpec::totals() const {
  std::vector<double> out(num_phases_);
  for (int t = 0; t < num_phases_; ++t) out[t] = total(t);
  return out;
}

std::vector<double> BudgetSpec::slice_row(int slice) const {
  std::vector<double> out(num_phases_);
  for (int t = 0; t < num_phases_; ++t) out[t] = at(slice, t);
  return out;
}

CostReport cost_metric(std::span<const double> realized, std::span<const double> budgets) {
  if (realized.size() != budgets.size()) throw ConfigError("need one realized cost per phase");
  CostReport report;
  for (size_t t = 0; t < realized.size(); ++t) {
    if (budgets[t] == 0.0) throw ConfigError("zero budget in phase " + std::to_string(t));
    double u = realized[t] / budgets[t];
    report.utilization.push_back(u);
    report.total += u - 1.0;
  }
  return report;
}

double normalized_score(double score, double random_score, double expert_score) {
  double span = expert_score - random_score;
  if (span == 0.0 || !std::isfinite(span)) {
    throw std::invalid_argument("normalized_score: expert and random anchors coincide");
  }
  return 100.0 * (score - random_score) / span;
}

LambdaVector::LambdaVector(int num_phases, double init) : values_(num_phases, init) {
  if (!(init >= 0.0)) throw ConfigError("lambda must be non-negative");
}

LambdaVector::LambdaVector(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("lambda must be finite and non-negative");
  }
}

void LambdaVector::set(int phase, double value) {
  if (!(value >= 0.0) || !std::isfinite(value)) throw ConfigError("lambda must be finite and non-negative");
  values_.at(phase) = value;
}

void LambdaVector::shift_clamped(int phase, double delta) {
  double& v = values_.at(phase);
  v = std::max(0.0, v + delta);
}

const LambdaVector& LambdaTable::lookup(int slice, bool* exact) const {
  if (slices_.empty()) throw ConfigError("empty lambda table");
  auto it = slices_.find(slice);
  if (exact) *exact = it != slices_.end();
  if (it != slices_.end()) return it->second;
  if (auto g = slices_.find(-1); g != slices_.end()) return g->second;
  const LambdaVector* best = nullptr;
  int best_dist = std::numeric_limits<int>::max();
  for (const auto& [key, value] : slices_) {
    int d = std::abs(key - slice);
    if (d < best_dist) {
      best_dist = d;
      best = &value;
    }
  }
  return *best;
}

}  // namespace mpca
