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

// In-process serving loop: greedy calibrated actions per phase, a per-slice
// lambda table, and the PID clamp stepped once per tick by one coordinator.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpca/control.hpp"
#include "mpca/core.hpp"
#include "mpca/lambda_correct.hpp"
#include "mpca/policy.hpp"
#include "mpca/simenv.hpp"

namespace mpca {

struct ServedRequest {
  std::uint64_t id = 0;
  int slice = 0;
  std::vector<int> path;
  std::vector<double> costs;  // per phase
  RevenueOutcome outcome;
  double reward = 0.0;
  bool lambda_fallback = false;  // slice missing from the lambda table
};

/// Serves one request at a fixed clamp level.
ServedRequest serve_request(const QPolicy& policy, const Simulator& sim, const SyntheticRequest& req,
                            double clamp_level, const ClampConfig& clamp, bool noisy = false);

struct SpikeScenario {
  int first_visit = -1;  // position in the serving order; -1 disables the spike
  int visits = 1;        // how many consecutive slices it lasts
  double factor = 2.0;

  bool covers(int visit) const { return first_visit >= 0 && visit >= first_visit && visit < first_visit + visits; }
};

struct StreamConfig {
  std::vector<int> requests_per_slice;  // base traffic, one entry per slice
  std::vector<int> slices;              // serving order; empty means every slice once
  int ticks_per_slice = 20;
  double slice_seconds = 3600.0;
  double load_smoothing = 0.3;
  bool control_enabled = true;
  PidConfig pid;
  ClampConfig clamp;
  SpikeScenario spike;
  /// Re-run lambda correction on the previous slice's traffic every this
  /// many slices (0 disables).
  int refresh_every = 0;
  CorrectionOptions refresh;
  bool noisy = false;
  std::uint64_t first_id = 1'000'000'000ULL;
  /// Optional fixed traffic; a slice served from here uses these requests
  /// (plus generated extras when spiking) instead of generated ones.
  std::span<const SyntheticRequest> replay;
};

struct SliceReport {
  int slice = 0;
  int requests = 0;
  std::vector<double> cost;
  std::vector<double> utilization;
  double ret = 0.0;
  double clamp_seconds = 0.0;
  int lambda_fallbacks = 0;
};

struct TickRecord {
  long tick = 0;
  int slice = 0;
  double load = 0.0;         // instantaneous tick cost / tick capacity
  double measurement = 0.0;  // smoothed load fed to the controller
  double output = 0.0;
  double clamp_level = 0.0;  // level used while serving this tick
};

struct StreamReport {
  std::vector<SliceReport> slices;
  std::vector<TickRecord> ticks;
  double total_return = 0.0;
  std::vector<double> total_cost;
};

StreamReport run_stream(const QNetwork& net, const StateEncoder& encoder, const Simulator& sim, LambdaTable table,
                        const BudgetSpec& budgets, const StreamConfig& cfg, QPolicyOptions policy_opts = {});

void write_serving_report(const std::string& path, const StreamReport& report, const std::string& config_hash);
void write_control_log(const std::string& path, const StreamReport& report, const std::string& config_hash);

}  // namespace mpca
