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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "mpca/lambda_correct.hpp"
#include "mpca/policy.hpp"

namespace mpca {
namespace {

EnvConfig small_env(int requests = 1200, int slices = 1, std::uint64_t seed = 11) {
  EnvConfig env;
  env.num_requests = requests;
  env.num_slices = slices;
  env.seed = seed;
  return env;
}

QNetwork random_net(const EnvConfig& env, std::uint64_t seed = 3, int heads = 1, bool imitation = false) {
  StateEncoder enc(env);
  QNetworkConfig cfg;
  cfg.input_dim = enc.dim();
  cfg.hidden = {16, 8};
  cfg.action_sizes = env.actions.phase_sizes();
  cfg.heads = heads;
  cfg.imitation = imitation;
  cfg.seed = seed;
  return QNetwork(cfg);
}

// Cheapest action in every phase, ties to the lower index.
class MinCostPolicy final : public Policy {
 public:
  void decide(int, std::span<const PhaseState> states, std::span<int> actions) const override {
    for (size_t i = 0; i < states.size(); ++i) {
      const auto& c = states[i].action_costs;
      actions[i] = static_cast<int>(std::min_element(c.begin(), c.end()) - c.begin());
    }
  }
};

LambdaTable global(std::vector<double> l) { return LambdaTable(LambdaVector(std::move(l))); }

TEST(Policy, RandomPolicyIsIndependentOfBatching) {
  const EnvConfig env = small_env(50);
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  RandomPolicy p(9);
  std::vector<PhaseState> states;
  for (const auto& r : reqs) states.push_back(sim.initial_state(r));
  std::vector<int> all(states.size());
  p.decide(0, states, all);
  for (size_t i = 0; i < states.size(); ++i) {
    int one = -1;
    p.decide(0, std::span(&states[i], 1), std::span(&one, 1));
    EXPECT_EQ(one, all[i]);
    EXPECT_GE(one, 0);
    EXPECT_LT(one, env.actions.phase_size(0));
  }
}

TEST(Policy, ZeroLambdaMatchesUncalibratedArgmax) {
  const EnvConfig env = small_env(60);
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StateEncoder enc(env);
  QNetwork net = random_net(env);
  QPolicy policy(net, enc, global({0, 0, 0}));
  for (const auto& r : reqs) {
    PhaseState s = sim.initial_state(r);
    for (int t = 0; t < 3; ++t) {
      int a = -1;
      policy.decide(t, std::span(&s, 1), std::span(&a, 1));
      auto q = net.q_values(enc.encode(s), t, RemMixture::uniform(1));
      const double best = *std::max_element(q.begin(), q.end());
      EXPECT_EQ(q[a], best);
      s = sim.step(r, s, a, false).next;
    }
  }
}

TEST(Policy, BcqMaskRestrictsChoices) {
  const EnvConfig env = small_env(40);
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StateEncoder enc(env);
  QNetwork net = random_net(env, 5, 1, true);
  QPolicy policy(net, enc, global({0, 0, 0}), QPolicyOptions{0.9});
  std::vector<PhaseState> states;
  for (const auto& r : reqs) states.push_back(sim.initial_state(r));
  const PhaseScores sc = policy.scores(0, states);
  ASSERT_EQ(sc.masks.size(), states.size());
  std::vector<int> acts(states.size());
  policy.decide(0, states, acts);
  for (size_t i = 0; i < states.size(); ++i) EXPECT_TRUE(sc.masks[i][acts[i]]);
}

TEST(Evaluate, ParallelAndSerialAreBitIdentical) {
  const EnvConfig env = small_env(900, 4);
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StateEncoder enc(env);
  QNetwork net = random_net(env);
  QPolicy policy(net, enc, global({0.3, 0.1, 0.2}));
  EXPECT_EQ(evaluate_policy(sim, policy, reqs, {true}), evaluate_policy_serial(sim, policy, reqs, {true}));
  RandomPolicy rp(4);
  EXPECT_EQ(evaluate_policy(sim, rp, reqs), evaluate_policy_serial(sim, rp, reqs));
}

TEST(Evaluate, HugeLambdaGivesMinimalCost) {
  const EnvConfig env = small_env(500);
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StateEncoder enc(env);
  QNetwork net = random_net(env);
  QPolicy policy(net, enc, global({1e9, 1e9, 1e9}));
  MinCostPolicy cheap;
  const auto a = evaluate_policy(sim, policy, reqs);
  const auto b = evaluate_policy(sim, cheap, reqs);
  for (int t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(a.phase_cost[t], b.phase_cost[t]);
}

TEST(Evaluate, CostAndValueNonIncreasingInLambda) {
  const EnvConfig env = small_env(400);
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StateEncoder enc(env);
  QNetwork net = random_net(env, 8);
  for (int phase = 0; phase < 3; ++phase) {
    double prev_cost = INFINITY;
    double prev_value = INFINITY;
    for (int k = 0; k < 40; ++k) {
      std::vector<double> l{0.2, 0.2, 0.2};
      l[phase] = 0.05 * k;
      const auto r = evaluate_policy(sim, QPolicy(net, enc, global(l)), reqs);
      EXPECT_LE(r.phase_cost[phase], prev_cost + 1e-9) << "phase " << phase << " step " << k;
      EXPECT_LE(r.phase_value[phase], prev_value + 1e-9) << "phase " << phase << " step " << k;
      prev_cost = r.phase_cost[phase];
      prev_value = r.phase_value[phase];
    }
  }
}

TEST(Evaluate, UtilizationDividesByBudget) {
  EvalResult r;
  r.phase_cost = {50, 30, 10};
  const std::vector<double> b{100, 30, 40};
  const auto u = utilization(r, b);
  EXPECT_DOUBLE_EQ(u[0], 0.5);
  EXPECT_DOUBLE_EQ(u[1], 1.0);
  EXPECT_DOUBLE_EQ(u[2], 0.25);
}

// Cost curve made of many unit steps at random thresholds.
struct StepCurve {
  std::vector<double> thresholds;
  explicit StepCurve(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int i = 0; i < n; ++i) thresholds.push_back(u(rng));
  }
  ProbePoint operator()(double lambda) const {
    double c = 0;
    for (double th : thresholds) c += lambda < th ? 1.0 : 0.0;
    return {lambda, c, 2.0 * c};
  }
};

TEST(Bisection, SlackBudgetReturnsZero) {
  StepCurve curve(100, 1);
  auto r = bisect_phase(std::cref(curve), 500.0);
  EXPECT_EQ(r.lambda, 0.0);
  EXPECT_TRUE(r.converged);
  EXPECT_TRUE(r.slack);
  EXPECT_EQ(r.probes, 1);
}

TEST(Bisection, LandsOnTheOracleCrossingOfAStepCurve) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    StepCurve curve(1000, seed);
    const double budget = 500.0;
    auto r = bisect_phase(std::cref(curve), budget);
    ASSERT_TRUE(r.converged) << seed;
    EXPECT_LE(r.probes, 30);
    EXPECT_LE(std::abs(r.cost / budget - 1.0), 0.005);
    // Oracle: lambda grid at 1e-3 resolution, band of admissible lambdas.
    double lo = INFINITY, hi = -INFINITY;
    for (int k = 0; k <= 8000; ++k) {
      const double l = 1e-3 * k;
      if (std::abs(curve(l).cost / budget - 1.0) <= 0.005) {
        lo = std::min(lo, l);
        hi = std::max(hi, l);
      }
    }
    EXPECT_GE(r.lambda, lo - 1e-3);
    EXPECT_LE(r.lambda, hi + 1e-3);
  }
}

TEST(Bisection, BudgetBelowMinimalCostReturnsBoundaryWithWarning) {
  auto probe = [](double l) { return ProbePoint{l, 50.0 + 100.0 / (1.0 + l), 0.0}; };
  BisectionOptions opts;
  opts.min_cost = 50.0;
  auto r = bisect_phase(probe, 10.0, opts);
  EXPECT_FALSE(r.converged);
  EXPECT_FALSE(r.bracketed);
  EXPECT_FALSE(r.warning.empty());
  EXPECT_LE(r.probes, 30);
}

TEST(Bisection, NonMonotoneCurveFallsBackToGrid) {
  // Cost dips then rises again: monotonicity is violated between probes.
  auto probe = [](double l) {
    const double c = 100.0 - 60.0 * l + 40.0 * l * l;
    return ProbePoint{l, c, -c};
  };
  auto r = bisect_phase(probe, 60.0);
  EXPECT_TRUE(r.used_grid);
  EXPECT_FALSE(r.warning.empty());
  // The result is at least as good as every feasible probe in the trace.
  for (const auto& p : r.trace) {
    if (p.cost <= 60.0 * 1.005) EXPECT_GE(r.value, p.value);
  }
}

TEST(Bisection, GridSearchPicksBestFeasibleProbe) {
  auto probe = [](double l) { return ProbePoint{l, 10.0 - l, 10.0 - l}; };
  auto r = grid_search_phase(probe, 5.0, 10.0, 11, 0.005);
  EXPECT_DOUBLE_EQ(r.lambda, 5.0);
  EXPECT_DOUBLE_EQ(r.cost, 5.0);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.grid_probes, 11);
}

TEST(Bisection, RejectsNonPositiveBudget) {
  auto probe = [](double l) { return ProbePoint{l, 1.0, 0.0}; };
  EXPECT_THROW(bisect_phase(probe, 0.0), std::invalid_argument);
}

std::vector<double> static_like_budget(const Simulator& sim, std::span<const SyntheticRequest> reqs, double scale) {
  RandomPolicy p(1);
  auto r = evaluate_policy(sim, p, reqs);
  for (double& c : r.phase_cost) c *= scale;
  return r.phase_cost;
}

TEST(Correction, SingleSliceMatchesSequentialBisection) {
  const EnvConfig env = small_env(1500);
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StateEncoder enc(env);
  QNetwork net = random_net(env, 12);
  const auto budget = static_like_budget(sim, reqs, 0.8);
  const BudgetSpec spec = BudgetSpec::uniform(budget, 1);
  const CorrectionResult res = correct_all(net, enc, sim, reqs, spec, LambdaVector(3));

  // Reference: bisect each phase in order with earlier phases fixed.
  std::vector<double> lambda{0, 0, 0};
  for (int t = 0; t < 3; ++t) {
    auto probe = [&](double l) {
      auto v = lambda;
      v[t] = l;
      auto r = evaluate_policy(sim, QPolicy(net, enc, global(v)), reqs);
      return ProbePoint{l, r.phase_cost[t], r.phase_value[t]};
    };
    BisectionOptions opts;
    lambda[t] = bisect_phase(probe, budget[t], opts).lambda;
  }
  const LambdaVector& got = res.table.lookup(-1);
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(got[t], lambda[t], 1e-12) << t;
  EXPECT_TRUE(res.all_converged);
  for (const auto& p : res.phases) {
    EXPECT_LE(std::abs(p.utilization - 1.0), 0.005 + 1e-12);
    EXPECT_LE(p.search.probes, 30);
  }
}

TEST(Correction, HeavierSliceGetsLargerMultiplier) {
  EnvConfig env = small_env(3000, 2);
  env.traffic_profile = {2.0, 1.0};
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StateEncoder enc(env);
  QNetwork net = random_net(env, 14);
  // Equal capacity in both slices: the busier slice must be priced higher.
  const auto whole = static_like_budget(sim, reqs, 0.5);
  std::vector<double> table;
  for (int s = 0; s < 2; ++s) {
    for (int t = 0; t < 3; ++t) table.push_back(whole[t] / 2.0);
  }
  const CorrectionResult res = correct_all(net, enc, sim, reqs, BudgetSpec(3, 2, table), LambdaVector(3));
  ASSERT_TRUE(res.table.contains(0));
  ASSERT_TRUE(res.table.contains(1));
  for (int t = 0; t < 3; ++t) EXPECT_GE(res.table.lookup(0)[t], res.table.lookup(1)[t]) << t;
}

TEST(Correction, IsDeterministic) {
  const EnvConfig env = small_env(800, 3);
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StateEncoder enc(env);
  QNetwork net = random_net(env, 2);
  const auto whole = static_like_budget(sim, reqs, 0.7);
  std::vector<double> table;
  for (int s = 0; s < 3; ++s) {
    for (int t = 0; t < 3; ++t) table.push_back(whole[t] / 3.0);
  }
  BudgetSpec spec(3, 3, table);
  const auto a = correct_all(net, enc, sim, reqs, spec, LambdaVector(3));
  const auto b = correct_all(net, enc, sim, reqs, spec, LambdaVector(3));
  EXPECT_EQ(a.final_eval, b.final_eval);
  EXPECT_EQ(a.table.entries(), b.table.entries());
}

TEST(Correction, LambdaTableFileRoundTrip) {
  LambdaTable t;
  t.set(-1, LambdaVector({0.1, 0.2, 0.3}));
  t.set(4, LambdaVector({1.0 / 3.0, 0.0, 7.25}));
  const auto path = (std::filesystem::temp_directory_path() / "mpca_lambda_rt.csv").string();
  write_lambda_table(path, t);
  const LambdaTable back = read_lambda_table(path);
  EXPECT_EQ(back.entries(), t.entries());
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace mpca
