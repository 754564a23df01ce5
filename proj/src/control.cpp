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

#include "mpca/control.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mpca/core.hpp"
#include "mpca/rng.hpp"

namespace mpca {

void PidConfig::validate() const {
  if (!(out_min <= out_max)) throw ConfigError("pid: output bounds must be ordered");
  if (!(sample_period > 0.0)) throw ConfigError("pid: sample period must be positive");
  if (!(integral_limit >= 0.0)) throw ConfigError("pid: integral limit must be non-negative");
  if (!std::isfinite(kp) || !std::isfinite(ki) || !std::isfinite(kd) || !std::isfinite(setpoint)) {
    throw ConfigError("pid: gains and setpoint must be finite");
  }
}

PidStep pid_step(const PidConfig& cfg, const PidState& state, double measurement) {
  if (!std::isfinite(measurement)) throw std::invalid_argument("pid_step: non-finite measurement");
  const double dt = cfg.sample_period;
  const double error = measurement - cfg.setpoint;
  const double derivative = state.primed ? (error - state.prev_error) / dt : 0.0;

  double integral = std::clamp(state.integral + error * dt, -cfg.integral_limit, cfg.integral_limit);
  double raw = cfg.kp * error + cfg.ki * integral + cfg.kd * derivative;
  // Conditional integration: keep the old integral when the output would
  // saturate and the error pushes it further out.
  if ((raw > cfg.out_max && error > 0.0) || (raw < cfg.out_min && error < 0.0)) {
    integral = state.integral;
    raw = cfg.kp * error + cfg.ki * integral + cfg.kd * derivative;
  }
  PidStep out;
  out.output = std::clamp(raw, cfg.out_min, cfg.out_max);
  out.state = {integral, error, out.output, true};
  return out;
}

double ClampGovernor::update(double control_output) {
  double target = std::clamp(control_output, 0.0, 1.0);
  level_ = target >= level_ ? target : std::max(target, level_ - cfg_.recovery_rate);
  return level_;
}

int queue_cap(double level, int queue_buckets, std::uint64_t request_id) {
  level = std::clamp(level, 0.0, 1.0);
  const double cap = (queue_buckets - 1) * (1.0 - level);
  const double whole = std::floor(cap);
  const double frac = cap - whole;
  const double u = to_unit_interval(hash_combine(0x636c616d70ULL, request_id));
  return static_cast<int>(whole) + (u < frac ? 1 : 0);
}

int clamp_action(int phase, int action, std::span<const double> costs, double level, std::uint64_t request_id,
                 const ClampConfig& cfg) {
  if (level <= 0.0) return action;
  int out = action;
  if (phase == kQueuePhase) {
    int cap = queue_cap(level, cfg.queue_buckets, request_id);
    if (cap < out && costs[cap] <= costs[out]) out = cap;
  } else if (phase == kModelPhase && level >= cfg.model_threshold) {
    int cheapest = static_cast<int>(std::min_element(costs.begin(), costs.end()) - costs.begin());
    if (costs[cheapest] < costs[out]) out = cheapest;
  }
  return out;
}

std::vector<int> apply_clamp(double level, std::span<const int> decisions,
                             std::span<const std::vector<double>> costs, std::uint64_t request_id,
                             const ClampConfig& cfg) {
  if (decisions.size() != costs.size()) throw std::invalid_argument("apply_clamp: one cost row per phase");
  std::vector<int> out(decisions.begin(), decisions.end());
  for (size_t t = 0; t < out.size(); ++t) {
    out[t] = clamp_action(static_cast<int>(t), out[t], costs[t], level, request_id, cfg);
  }
  return out;
}

LoadMonitor::LoadMonitor(double smoothing, double capacity) : smoothing_(smoothing), capacity_(capacity) {
  if (!(smoothing > 0.0 && smoothing <= 1.0)) throw ConfigError("load smoothing must be in (0, 1]");
  set_capacity(capacity);
}

void LoadMonitor::set_capacity(double capacity) {
  if (!(capacity > 0.0)) throw ConfigError("load capacity must be positive");
  capacity_ = capacity;
}

double LoadMonitor::update(double step_cost) {
  const double x = step_cost / capacity_;
  load_ = primed_ ? (1.0 - smoothing_) * load_ + smoothing_ * x : x;
  primed_ = true;
  return load_;
}

}  // namespace mpca
