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

#include <cmath>
#include <random>

#include "mpca/control.hpp"
#include "mpca/core.hpp"

namespace mpca {
namespace {

TEST(Pid, AtSetpointWithNoHistoryOutputsZero) {
  PidConfig cfg;
  const auto s = pid_step(cfg, PidState{}, cfg.setpoint);
  EXPECT_EQ(s.output, 0.0);
}

TEST(Pid, ProportionalOnly) {
  PidConfig cfg;
  cfg.kp = 1.0;
  cfg.ki = 0.0;
  cfg.kd = 0.0;
  cfg.setpoint = 1.0;
  EXPECT_NEAR(pid_step(cfg, PidState{}, 1.2).output, 0.2, 1e-12);
}

TEST(Pid, OutputAndIntegralStayBounded) {
  PidConfig cfg;
  cfg.kd = 0.4;
  cfg.out_min = -0.5;
  cfg.out_max = 0.75;
  cfg.integral_limit = 2.0;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  PidState st;
  for (int k = 0; k < 5000; ++k) {
    const auto s = pid_step(cfg, st, u(rng));
    EXPECT_GE(s.output, cfg.out_min);
    EXPECT_LE(s.output, cfg.out_max);
    EXPECT_LE(std::abs(s.state.integral), cfg.integral_limit);
    st = s.state;
  }
}

TEST(Pid, NoDerivativeKickOnTheFirstSample) {
  PidConfig cfg;
  cfg.kp = 0.0;
  cfg.ki = 0.0;
  cfg.kd = 1.0;
  cfg.out_min = -10.0;
  cfg.out_max = 10.0;
  const auto first = pid_step(cfg, PidState{}, 3.0);
  EXPECT_EQ(first.output, 0.0);
  const auto second = pid_step(cfg, first.state, 3.5);
  EXPECT_NEAR(second.output, 0.5, 1e-12);
}

TEST(Pid, IntegralFreezesWhileSaturated) {
  PidConfig cfg;
  const auto s = pid_step(cfg, PidState{}, 100.0);
  EXPECT_EQ(s.output, cfg.out_max);
  EXPECT_EQ(s.state.integral, 0.0);
}

TEST(Pid, RecoversQuicklyAfterLongSaturation) {
  PidConfig cfg;
  PidState st;
  for (int k = 0; k < 500; ++k) st = pid_step(cfg, st, 3.0).state;
  // Load drops below the setpoint: the clamp must release within a few steps.
  int steps = 0;
  double out = 1.0;
  while (out > 0.0 && steps < 50) {
    const auto s = pid_step(cfg, st, 0.8);
    st = s.state;
    out = s.output;
    ++steps;
  }
  EXPECT_LE(steps, 10);
}

TEST(Pid, FrozenPlantAtSetpointIsAFixedPoint) {
  PidConfig cfg;
  cfg.kd = 0.2;
  PidState st{0.4, 0.0, 0.0, true};
  auto prev = pid_step(cfg, st, cfg.setpoint);
  for (int k = 0; k < 50; ++k) {
    const auto next = pid_step(cfg, prev.state, cfg.setpoint);
    EXPECT_EQ(next.output, prev.output);
    EXPECT_EQ(next.state.integral, prev.state.integral);
    prev = next;
  }
}

TEST(Pid, FirstOrderPlantSettlesWithinOnePercent) {
  // Load relaxes towards demand * (1 - 0.6 u); demand 1.3 needs u = 0.385.
  PidConfig cfg;
  PidState st;
  double load = 1.3;
  for (int k = 0; k < 200; ++k) {
    const auto s = pid_step(cfg, st, load);
    st = s.state;
    load = 0.7 * load + 0.3 * 1.3 * (1.0 - 0.6 * s.output);
  }
  EXPECT_LT(std::abs(load - cfg.setpoint), 0.01 * cfg.setpoint);
}

TEST(Pid, InvalidConfigIsRejected) {
  PidConfig cfg;
  cfg.out_min = 2.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = PidConfig{};
  cfg.sample_period = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(pid_step(PidConfig{}, PidState{}, std::nan("")), std::invalid_argument);
}

const std::vector<std::vector<double>> kCosts{
    {0.0, 0.8, 1.0, 1.8},
    [] {
      std::vector<double> q;
      for (int b = 0; b < 26; ++b) q.push_back(0.1 * (b + 1));
      return q;
    }(),
    {0.0, 0.5, 1.0},
};

TEST(Clamp, ZeroLevelLeavesDecisionsUnchanged) {
  const std::vector<int> d{3, 25, 2};
  EXPECT_EQ(apply_clamp(0.0, d, kCosts, 7, ClampConfig{}), d);
}

TEST(Clamp, FullLevelForcesBucketZeroAndTheSimpleModel) {
  const std::vector<int> d{3, 25, 2};
  for (std::uint64_t id = 0; id < 100; ++id) {
    const auto out = apply_clamp(1.0, d, kCosts, id, ClampConfig{});
    EXPECT_EQ(out[0], 3);
    EXPECT_EQ(out[1], 0);
    EXPECT_EQ(out[2], 0);
  }
}

TEST(Clamp, NeverRaisesCost) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 5000; ++k) {
    const std::vector<int> d{static_cast<int>(rng() % 4), static_cast<int>(rng() % 26), static_cast<int>(rng() % 3)};
    const auto out = apply_clamp(u(rng), d, kCosts, rng(), ClampConfig{});
    for (int t = 0; t < 3; ++t) EXPECT_LE(kCosts[t][out[t]], kCosts[t][d[t]]);
  }
}

TEST(Clamp, DitheredCapAveragesToTheExactLevel) {
  for (double level : {0.1, 0.37, 0.5, 0.9}) {
    double sum = 0.0;
    const int n = 20000;
    for (int id = 0; id < n; ++id) sum += queue_cap(level, 26, static_cast<std::uint64_t>(id));
    EXPECT_NEAR(sum / n, 25.0 * (1.0 - level), 0.02) << level;
  }
}

TEST(Clamp, ModelIsForcedOnlyAboveTheThreshold) {
  ClampConfig cfg;
  const std::vector<int> d{0, 0, 2};
  EXPECT_EQ(apply_clamp(cfg.model_threshold - 0.01, d, kCosts, 1, cfg)[2], 2);
  EXPECT_EQ(apply_clamp(cfg.model_threshold, d, kCosts, 1, cfg)[2], 0);
}

TEST(Governor, RisesAtOnceAndRecoversGradually) {
  ClampConfig cfg;
  cfg.recovery_rate = 0.1;
  ClampGovernor g(cfg);
  EXPECT_EQ(g.update(0.8), 0.8);
  EXPECT_NEAR(g.update(0.0), 0.7, 1e-12);
  EXPECT_NEAR(g.update(0.0), 0.6, 1e-12);
  EXPECT_NEAR(g.update(0.65), 0.65, 1e-12);
  EXPECT_NEAR(g.update(0.6), 0.6, 1e-12);
  EXPECT_EQ(g.update(2.0), 1.0);
}

TEST(LoadMonitor, ExponentialMovingAverage) {
  LoadMonitor m(0.5, 10.0);
  EXPECT_DOUBLE_EQ(m.update(20.0), 2.0);
  EXPECT_DOUBLE_EQ(m.update(10.0), 1.5);
  EXPECT_DOUBLE_EQ(m.update(0.0), 0.75);
  EXPECT_THROW(LoadMonitor(0.0, 1.0), ConfigError);
  EXPECT_THROW(LoadMonitor(0.5, 0.0), ConfigError);
}

}  // namespace
}  // namespace mpca
