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
#include <map>
#include <mutex>
#include <numeric>
#include <random>

#include "mpca/baselines.hpp"

namespace mpca {
namespace {

std::vector<double> random_target(int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> t(dim);
  for (double& x : t) x = u(rng);
  return t;
}

CemObjective quadratic(const std::vector<double>& target) {
  return [target](std::span<const double> theta) {
    double s = 0.0;
    for (size_t d = 0; d < target.size(); ++d) s -= (theta[d] - target[d]) * (theta[d] - target[d]);
    return CemScore{s, s, true};
  };
}

CemConfig toy_config(std::uint64_t seed) {
  CemConfig cfg;
  cfg.iterations = 80;
  cfg.samples = 200;
  cfg.retain = 40;
  cfg.init_sigma = 1.0;
  cfg.seed = seed;
  return cfg;
}

TEST(Static, SameTripleForEveryRequest) {
  EnvConfig env;
  env.num_requests = 200;
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StaticRule rule{3, 12, 0};
  StaticPolicy p(rule);
  const auto r = evaluate_policy(sim, p, reqs, {true});
  for (const auto& d : r.decisions) EXPECT_EQ(d, (std::vector<int>{3, 12, 0}));
}

TEST(Static, RuleOutsideTheGridIsRejected) {
  EnvConfig env;
  EXPECT_THROW((StaticRule{4, 12, 1}.validate(env.actions)), ConfigError);
  EXPECT_THROW((StaticRule{0, 26, 1}.validate(env.actions)), ConfigError);
  EXPECT_THROW((StaticRule{0, 3, 3}.validate(env.actions)), ConfigError);
  EXPECT_NO_THROW((StaticRule{3, 25, 2}.validate(env.actions)));
}

TEST(Linear, ZeroThetaPicksTheMidpoint) {
  EXPECT_EQ(score_to_action(0.0, 26), 13);  // floor(12.5 + 0.5)
  EXPECT_EQ(score_to_action(0.0, 3), 1);
  EXPECT_EQ(score_to_action(0.0, 4), 2);
  EnvConfig env;
  StateEncoder enc(env);
  LinearPolicyParams params(enc.dim(), env.actions.phase_sizes());
  std::vector<double> x(enc.dim(), 0.7);
  EXPECT_EQ(linear_act(params, x, 0), 2);
  EXPECT_EQ(linear_act(params, x, 1), 13);
  EXPECT_EQ(linear_act(params, x, 2), 1);
}

TEST(Linear, ClampsAndIsMonotone) {
  EXPECT_EQ(score_to_action(-1e6, 26), 0);
  EXPECT_EQ(score_to_action(1e6, 26), 25);
  int prev = 0;
  for (double s = -20.0; s <= 20.0; s += 0.01) {
    const int a = score_to_action(s, 26);
    EXPECT_GE(a, prev);
    prev = a;
  }
}

TEST(Linear, ScoreIsTheDotProductOfThePhaseWeights) {
  LinearPolicyParams params(2, {4, 26, 3});
  ASSERT_EQ(params.size(), 6);
  params.theta = {0.0, 0.0, 3.0, -1.0, 0.0, 0.0};
  const std::vector<double> x{2.0, 1.0};
  EXPECT_EQ(linear_act(params, x, 1), score_to_action(5.0, 26));
  EXPECT_EQ(linear_act(params, x, 0), score_to_action(0.0, 4));
}

TEST(CemPenalty, FeasibleThetaKeepsItsReturn) {
  const std::vector<double> c{1, 2, 3}, b{1, 2, 3};
  EXPECT_DOUBLE_EQ(cem_penalized_reward(42.0, c, b, 1e8), 42.0);
}

TEST(CemPenalty, OverspendingOneUnitCostsThePenalty) {
  const std::vector<double> c{1, 2, 4}, b{1, 2, 3};
  EXPECT_DOUBLE_EQ(cem_penalized_reward(42.0, c, b, 1e8), 42.0 - 1e8);
}

TEST(CemPenalty, InfeasibleNeverOutranksFeasible) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> value(0.0, 100.0);
  std::uniform_real_distribution<double> over(1e-3, 5.0);
  const std::vector<double> b{10, 10, 10};
  for (int k = 0; k < 1000; ++k) {
    const std::vector<double> ok{10, 9, 5};
    std::vector<double> bad{10, 10, 10};
    bad[k % 3] += over(rng);
    // Penalty above the largest possible value gap divided by the smallest overspend.
    const double penalty = 1e8;
    EXPECT_GT(cem_penalized_reward(value(rng), ok, b, penalty), cem_penalized_reward(value(rng), bad, b, penalty));
  }
}

TEST(CemPenalty, FeasibleRankingFollowsRawReturn) {
  const std::vector<double> c{1, 1, 1}, b{2, 2, 2};
  EXPECT_LT(cem_penalized_reward(3.0, c, b, 1e8), cem_penalized_reward(4.0, c, b, 1e8));
}

TEST(Cem, ConvergesOnTheToyQuadratic) {
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto target = random_target(20, 100 + seed);
    const auto res = cem_search(toy_config(seed), 20, quadratic(target));
    double worst = 0.0;
    for (int d = 0; d < 20; ++d) worst = std::max(worst, std::abs(res.mu[d] - target[d]));
    hits += worst < 1e-2;
  }
  EXPECT_GE(hits, 19);
}

TEST(Cem, RefitSigmaIsTheEliteStandardDeviation) {
  CemConfig cfg = toy_config(5);
  cfg.iterations = 1;
  cfg.samples = 30;
  cfg.retain = 5;
  const auto target = random_target(4, 9);
  std::mutex m;
  std::vector<std::pair<double, std::vector<double>>> seen;
  auto base = quadratic(target);
  auto recording = [&](std::span<const double> theta) {
    CemScore s = base(theta);
    std::lock_guard<std::mutex> lock(m);
    seen.emplace_back(s.reward, std::vector<double>(theta.begin(), theta.end()));
    return s;
  };
  const auto res = cem_search(cfg, 4, recording);
  std::sort(seen.begin(), seen.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int d = 0; d < 4; ++d) {
    double mean = 0.0;
    for (int e = 0; e < 5; ++e) mean += seen[e].second[d];
    mean /= 5.0;
    double var = 0.0;
    for (int e = 0; e < 5; ++e) var += (seen[e].second[d] - mean) * (seen[e].second[d] - mean);
    EXPECT_NEAR(res.mu[d], mean, 1e-12);
    EXPECT_NEAR(res.sigma[d], std::sqrt(var / 5.0), 1e-12);
  }
}

TEST(Cem, EliteMeanRewardIsNonDecreasing) {
  int monotone = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto target = random_target(20, 300 + seed);
    const auto res = cem_search(toy_config(seed), 20, quadratic(target));
    bool ok = true;
    for (size_t i = 1; i < res.history.size(); ++i) {
      ok = ok && res.history[i].elite_mean_reward >= res.history[i - 1].elite_mean_reward;
    }
    monotone += ok;
  }
  EXPECT_GE(monotone, 19);
}

TEST(Cem, IsDeterministicForASeed) {
  const auto target = random_target(6, 1);
  CemConfig cfg = toy_config(77);
  cfg.iterations = 10;
  const auto a = cem_search(cfg, 6, quadratic(target));
  const auto b = cem_search(cfg, 6, quadratic(target));
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.sigma, b.sigma);
  EXPECT_EQ(a.best_theta, b.best_theta);
}

TEST(Cem, ReportsWhenNothingIsFeasible) {
  CemConfig cfg = toy_config(2);
  cfg.iterations = 3;
  const auto res = cem_search(cfg, 3, [](std::span<const double>) { return CemScore{-1.0, 0.0, false}; });
  EXPECT_FALSE(res.found_feasible);
}

TEST(Cem, InvalidConfigIsRejected) {
  CemConfig cfg;
  cfg.retain = cfg.samples + 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = CemConfig{};
  cfg.init_sigma = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Cem, TrainedPolicyMeetsTheBudget) {
  EnvConfig env;
  env.num_requests = 600;
  env.seed = 21;
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StateEncoder enc(env);
  StaticPolicy anchor(StaticRule{});
  const auto budget = evaluate_policy(sim, anchor, reqs).phase_cost;
  CemConfig cfg;
  cfg.iterations = 8;
  cfg.samples = 24;
  cfg.retain = 4;
  cfg.init_sigma = 0.3;
  cfg.seed = 4;
  const auto res = cem_train(cfg, sim, enc, reqs, budget);
  ASSERT_TRUE(res.search.found_feasible);
  for (int t = 0; t < 3; ++t) EXPECT_LE(res.eval.phase_cost[t], budget[t]);
  LinearPolicy policy(res.params, enc);
  const auto again = evaluate_policy(sim, policy, reqs);
  EXPECT_EQ(again.phase_cost, res.eval.phase_cost);
}

EnvConfig three_bucket_env(std::uint64_t seed) {
  EnvConfig env;
  env.actions.queue_buckets = 3;
  env.num_requests = 3;
  env.seed = seed;
  return env;
}

TEST(Dcaf, LooseBudgetTakesTheValueMaximalBucket) {
  EnvConfig env;
  env.num_requests = 300;
  const auto reqs = generate_dataset(env);
  StaticRule rule;
  const auto res = dcaf_allocate(reqs, 1e9, rule, env.reward);
  EXPECT_EQ(res.lambda, 0.0);
  for (const auto& r : reqs) {
    double best = -1;
    for (int a = 0; a < env.actions.queue_buckets; ++a) {
      best = std::max(best, r.joint_reward(std::vector<int>{rule.channel_strategy, a, rule.model}, env.reward));
    }
    const int chosen = res.queue_actions.at(r.id);
    EXPECT_EQ(r.joint_reward(std::vector<int>{rule.channel_strategy, chosen, rule.model}, env.reward), best);
  }
}

TEST(Dcaf, MatchesExhaustiveKnapsackWithinTheDualityGap) {
  const StaticRule rule{2, 1, 1};
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const EnvConfig env = three_bucket_env(seed);
    const auto reqs = generate_dataset(env);
    auto value = [&](int i, int a) {
      return reqs[i].joint_reward(std::vector<int>{rule.channel_strategy, a, rule.model}, env.reward);
    };
    auto cost = [&](int i, int a) { return reqs[i].cost[kQueuePhase][a]; };
    const double budget = cost(0, 1) + cost(1, 1) + cost(2, 0);
    double opt = -1.0;
    double gap = 0.0;
    for (int i = 0; i < 3; ++i) gap = std::max(gap, value(i, 2) - value(i, 0));
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        for (int c = 0; c < 3; ++c) {
          if (cost(0, a) + cost(1, b) + cost(2, c) <= budget + 1e-12) {
            opt = std::max(opt, value(0, a) + value(1, b) + value(2, c));
          }
        }
      }
    }
    const auto res = dcaf_allocate(reqs, budget, rule, env.reward);
    EXPECT_LE(res.queue_cost, budget * 1.005 + 1e-12) << seed;
    EXPECT_LE(res.value, opt + 1e-9 + (res.queue_cost > budget ? gap : 0.0)) << seed;
    EXPECT_GE(res.value, opt - gap - 1e-9) << seed;
  }
}

TEST(Dcaf, CostIsMonotoneInTheBudget) {
  EnvConfig env;
  env.num_requests = 500;
  const auto reqs = generate_dataset(env);
  StaticRule rule;
  double prev = INFINITY;
  double prev_lambda = -1.0;
  for (double budget = 80.0; budget >= 10.0; budget -= 5.0) {
    const auto res = dcaf_allocate(reqs, budget, rule, env.reward);
    EXPECT_LE(res.queue_cost, prev + 1e-9);
    EXPECT_GE(res.lambda, prev_lambda);
    prev = res.queue_cost;
    prev_lambda = res.lambda;
  }
}

TEST(Dcaf, MeetsTheBudgetBandAndBeatsStatic) {
  EnvConfig env;
  env.num_requests = 3000;
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  StaticRule rule;
  StaticPolicy sp(rule);
  const auto anchor = evaluate_policy(sim, sp, reqs);
  const auto res = dcaf_by_slice(reqs, BudgetSpec::uniform(anchor.phase_cost, 1), rule, env.reward);
  ASSERT_EQ(res.size(), 1u);
  EXPECT_TRUE(res[0].search.converged);
  DcafPolicy dp(rule, res);
  const auto r = evaluate_policy(sim, dp, reqs);
  EXPECT_NEAR(r.phase_cost[kQueuePhase] / anchor.phase_cost[kQueuePhase], 1.0, 0.005);
  EXPECT_DOUBLE_EQ(r.phase_cost[0], anchor.phase_cost[0]);
  EXPECT_DOUBLE_EQ(r.phase_cost[2], anchor.phase_cost[2]);
  EXPECT_GT(r.total_return, anchor.total_return);
}

TEST(Dcaf, UnknownRequestsFallBackToTheRule) {
  StaticRule rule;
  DcafPolicy dp(rule, {});
  EnvConfig env;
  env.num_requests = 5;
  const auto reqs = generate_dataset(env);
  Simulator sim(env);
  const auto r = evaluate_policy(sim, dp, reqs, {true});
  for (const auto& d : r.decisions) EXPECT_EQ(d[1], rule.queue_bucket);
}

}  // namespace
}  // namespace mpca
