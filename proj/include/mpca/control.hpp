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

// Load-feedback safety net for serving: a positional PID controller on a
// smoothed load signal, and a clamp that turns its output into caps on the
// queue length and the prediction model.

#include <cstdint>
#include <span>
#include <vector>

namespace mpca {

struct PidConfig {
  double kp = 0.8;
  double ki = 0.3;
  double kd = 0.0;
  double setpoint = 1.0;  // target load, as a fraction of capacity
  double out_min = 0.0;
  double out_max = 1.0;
  double integral_limit = 5.0;  // |integral| bound (anti-windup)
  double sample_period = 1.0;

  void validate() const;
};

struct PidState {
  double integral = 0.0;
  double prev_error = 0.0;
  double output = 0.0;
  bool primed = false;  // false until the first sample; no derivative kick
};

struct PidStep {
  double output = 0.0;
  PidState state;
};

/// error = measurement - setpoint; u = kp e + ki I + kd de/dt, clamped to
/// [out_min, out_max]. The integral is bounded by integral_limit and is not
/// advanced while the output is saturated in the direction of the error.
PidStep pid_step(const PidConfig& cfg, const PidState& state, double measurement);

struct ClampConfig {
  int queue_buckets = 26;
  double model_threshold = 0.75;  // clamp level at which the simple model is forced
  double recovery_rate = 0.05;    // largest per-step decrease of the clamp level
};

/// Rate-limited clamp level: rises immediately with the controller output,
/// falls by at most recovery_rate per step.
class ClampGovernor {
 public:
  explicit ClampGovernor(ClampConfig cfg = {}) : cfg_(cfg) {}
  double update(double control_output);
  double level() const { return level_; }
  const ClampConfig& config() const { return cfg_; }

 private:
  ClampConfig cfg_;
  double level_ = 0.0;
};

/// Largest admissible queue bucket for one request at `level` in [0, 1].
/// The fractional part of (N_q - 1)(1 - level) is dithered by request id so
/// the average cap is exact.
int queue_cap(double level, int queue_buckets, std::uint64_t request_id);

/// Clamped action for one phase (0 channel, 1 queue, 2 model). Never returns
/// an action costlier than `action`.
int clamp_action(int phase, int action, std::span<const double> costs, double level, std::uint64_t request_id,
                 const ClampConfig& cfg);

/// Clamps a full decision path; costs[t] holds phase t's action costs.
std::vector<int> apply_clamp(double level, std::span<const int> decisions,
                             std::span<const std::vector<double>> costs, std::uint64_t request_id,
                             const ClampConfig& cfg);

/// Exponential moving average of per-step cost divided by capacity.
class LoadMonitor {
 public:
  LoadMonitor(double smoothing, double capacity);
  double update(double step_cost);
  double load() const { return load_; }
  void set_capacity(double capacity);

 private:
  double smoothing_;
  double capacity_;
  double load_ = 0.0;
  bool primed_ = false;
};

}  // namespace mpca
