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

// Policy evaluation on held-out traffic and post-training multiplier search:
// per phase, per time slice, find the lambda whose realized cost meets the
// budget, bisecting on a monotone cost curve and falling back to a grid scan
// when monotonicity fails.

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mpca/core.hpp"
#include "mpca/policy.hpp"
#include "mpca/qnet.hpp"
#include "mpca/simenv.hpp"

namespace mpca {

struct EvalResult {
  int requests = 0;
  std::vector<double> phase_cost;   // C_hat_t, summed over requests
  std::vector<double> phase_value;  // R_hat_t = sum_i Value_t(a_t)
  double total_return = 0.0;        // noise-free reward of the realized paths
  std::vector<std::vector<double>> slice_cost;  // [slice][phase]
  std::vector<double> slice_return;
  std::vector<int> slice_requests;
  std::vector<std::vector<int>> decisions;  // per request, when kept

  bool operator==(const EvalResult&) const = default;
};

struct EvalOptions {
  bool keep_decisions = false;
};

/// Phase-batched rollout; stepping is parallel across requests and every
/// reduction runs in request order.
EvalResult evaluate_policy(const Simulator& sim, const Policy& policy, std::span<const SyntheticRequest> eval_set,
                           EvalOptions opts = {});
/// Request-at-a-time reference rollout with the same reduction order.
EvalResult evaluate_policy_serial(const Simulator& sim, const Policy& policy,
                                  std::span<const SyntheticRequest> eval_set, EvalOptions opts = {});

/// Utilization per phase against whole-set budgets.
std::vector<double> utilization(const EvalResult& r, std::span<const double> budgets);

struct ProbePoint {
  double lambda = 0.0;
  double cost = 0.0;
  double value = 0.0;
};

using ProbeFn = std::function<ProbePoint(double lambda)>;

struct BisectionOptions {
  double tolerance = 0.005;  // accepted |cost / budget - 1|
  int max_probes = 30;
  double initial_upper = 1.0;
  int grid_points = 64;
  bool grid_fallback = true;
  /// Cost of the minimal-cost policy; the upper bracket stops doubling once
  /// it is reached. NaN means unknown (doubling runs until probes run out).
  double min_cost = std::numeric_limits<double>::quiet_NaN();
};

struct BisectionResult {
  double lambda = 0.0;
  double cost = 0.0;
  double value = 0.0;
  bool converged = false;  // within tolerance, or slack at lambda = 0
  bool slack = false;      // budget above the unconstrained cost
  bool bracketed = true;
  bool used_grid = false;
  int probes = 0;       // bisection probes (bounded by max_probes)
  int grid_probes = 0;  // extra probes spent by the fallback scan
  std::vector<ProbePoint> trace;
  std::string warning;
};

BisectionResult bisect_phase(const ProbeFn& probe, double budget, const BisectionOptions& opts = {});

/// Best feasible probe by value over an even lambda grid on [0, upper].
BisectionResult grid_search_phase(const ProbeFn& probe, double budget, double upper, int points,
                                  double tolerance);

struct PhaseCorrection {
  int slice = -1;  // -1 when corrected over the whole set
  int phase = 0;
  int requests = 0;
  double budget = 0.0;
  BisectionResult search;
  double utilization = 0.0;  // from the final rollout
};

struct CorrectionResult {
  LambdaTable table;
  std::vector<PhaseCorrection> phases;
  EvalResult final_eval;
  bool all_converged = true;
  /// Largest |final utilization - utilization seen by the search|.
  double residual_drift = 0.0;
};

struct CorrectionOptions {
  BisectionOptions bisection;
  QPolicyOptions policy;
};

/// Corrects phases in order for each time slice of `budgets`; a single-slice
/// budget table corrects the whole evaluation set at once and stores the
/// result as the global entry. `initial` supplies lambda for phases not yet
/// corrected and for slices without evaluation traffic.
CorrectionResult correct_all(const QNetwork& net, const StateEncoder& encoder, const Simulator& sim,
                             std::span<const SyntheticRequest> eval_set, const BudgetSpec& budgets,
                             const LambdaVector& initial, const CorrectionOptions& opts = {});

/// CSV rows: slice,phase,lambda,utilization (slice -1 is the global entry).
/// A non-empty hash is written as a leading comment line.
void write_lambda_table(const std::string& path, const CorrectionResult& result, const std::string& config_hash = "");
void write_lambda_table(const std::string& path, const LambdaTable& table, const std::string& config_hash = "");
LambdaTable read_lambda_table(const std::string& path);

}  // namespace mpca
