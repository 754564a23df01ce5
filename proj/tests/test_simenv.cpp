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
#include <cstdio>
#include <filesystem>

#include "mpca/simenv.hpp"

namespace mpca {
namespace {

EnvConfig small_config(int m = 1000, double rho = 0.0) {
  EnvConfig cfg;
  cfg.num_requests = m;
  cfg.violation_fraction = rho;
  cfg.seed = 7;
  return cfg;
}

// Richest action of every phase.
std::vector<int> max_path(const SyntheticRequest& r) {
  std::vector<int> path;
  for (const auto& c : r.cost) path.push_back(static_cast<int>(std::max_element(c.begin(), c.end()) - c.begin()));
  return path;
}

TEST(GenerateDataset, ConformingWithoutViolations) {
  auto data = generate_dataset(small_config());
  ASSERT_EQ(data.size(), 1000u);
  for (const auto& r : data) ASSERT_TRUE(conforms(r)) << "request " << r.id;
}

TEST(GenerateDataset, ViolationFractionControlsPassRate) {
  auto data = generate_dataset(small_config(1000, 0.1));
  auto pass = std::count_if(data.begin(), data.end(), [](const auto& r) { return conforms(r); });
  EXPECT_GE(pass, 850);
  EXPECT_LE(pass, 950);
}

TEST(GenerateDataset, DeterministicGivenSeed) {
  auto a = generate_dataset(small_config(300, 0.2));
  auto b = generate_dataset(small_config(300, 0.2));
  EXPECT_EQ(a, b);
  auto cfg = small_config(300, 0.2);
  cfg.seed = 8;
  EXPECT_NE(a, generate_dataset(cfg));
}

TEST(GenerateDataset, InvalidConfigRejected) {
  auto cfg = small_config();
  cfg.violation_fraction = 1.0;
  EXPECT_THROW(generate_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.p_min = 0.0;
  EXPECT_THROW(generate_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.p_max = 1.0;
  EXPECT_THROW(generate_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.traffic_profile = {1.0, 2.0};
  EXPECT_THROW(generate_dataset(cfg), ConfigError);
}

TEST(GenerateDataset, TrafficProfileShapesSlices) {
  auto cfg = small_config(20000);
  cfg.num_slices = 2;
  cfg.traffic_profile = {2.0, 1.0};
  auto data = generate_dataset(cfg);
  auto first = std::count_if(data.begin(), data.end(), [](const auto& r) { return r.slice == 0; });
  EXPECT_NEAR(static_cast<double>(first) / data.size(), 2.0 / 3.0, 0.02);
}

TEST(Simulator, InitialStateCopiesFeatures) {
  auto data = generate_dataset(small_config(5));
  Simulator sim(small_config());
  for (const auto& r : data) {
    auto s = sim.initial_state(r);
    EXPECT_EQ(s.phase, 0);
    EXPECT_TRUE(s.history.empty());
    EXPECT_EQ(s.user, r.user);
    EXPECT_EQ(s.context, r.context);
    EXPECT_EQ(s.slice, r.slice);
    EXPECT_EQ(s.action_costs, r.cost[0]);
  }
}

TEST(Simulator, RichestPathReachesMaximalValue) {
  auto data = generate_dataset(small_config(50));
  Simulator sim(small_config());
  for (const auto& r : data) {
    auto path = max_path(r);
    auto s = sim.initial_state(r);
    StepResult res;
    for (int t = 0; t < 3; ++t) {
      res = sim.step(r, s, path[t]);
      s = res.next;
    }
    ASSERT_TRUE(res.outcome.has_value());
    EXPECT_NEAR(res.outcome->fee_ad + res.outcome->price_o, r.value_scale, 1e-12 * r.value_scale);
  }
}

TEST(Simulator, EmptyChannelStrategyYieldsZeroValue) {
  auto data = generate_dataset(small_config(20));
  Simulator sim(small_config());
  for (const auto& r : data) {
    for (int q : {0, 12, 25}) {
      for (int m : {0, 2}) {
        std::vector<int> path{0, q, m};
        EXPECT_EQ(r.joint_value(path), 0.0);
      }
    }
    auto s = sim.step(r, sim.initial_state(r), 0).next;
    EXPECT_EQ(s.summary.retrieved, 0.0);
  }
}

TEST(Simulator, SmallInstanceMatchesBruteForce) {
  EnvConfig cfg = small_config(20);
  cfg.actions.channel_count = 1;
  cfg.actions.queue_buckets = 3;
  cfg.actions.model_count = 2;
  cfg.costs.channel_unit_costs = {1.0};
  cfg.costs.model_costs = {0.0, 1.0};
  auto data = generate_dataset(cfg);
  Simulator sim(cfg);
  for (const auto& r : data) {
    int paths = 0;
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 3; ++b) {
        for (int c = 0; c < 2; ++c) {
          auto s0 = sim.initial_state(r);
          auto s1 = sim.step(r, s0, a).next;
          auto s2 = sim.step(r, s1, b).next;
          auto out = sim.step(r, s2, c);
          double expected = r.value_scale * (r.value[0][a] / r.value_scale) * (r.value[1][b] / r.value_scale) *
                            (r.value[2][c] / r.value_scale);
          ASSERT_TRUE(out.outcome);
          EXPECT_NEAR(out.outcome->fee_ad + out.outcome->price_o, expected, 1e-12 * (1 + expected));
          ++paths;
        }
      }
    }
    EXPECT_EQ(paths, 12);
  }
}

TEST(Simulator, StepErrors) {
  auto data = generate_dataset(small_config(2));
  Simulator sim(small_config());
  const auto& r = data[0];
  auto s = sim.initial_state(r);
  EXPECT_THROW(sim.step(r, s, 4), std::out_of_range);
  EXPECT_THROW(sim.step(r, s, -1), std::out_of_range);
  EXPECT_THROW(sim.step(data[1], s, 0), std::invalid_argument);
  for (int t = 0; t < 3; ++t) s = sim.step(r, s, 0).next;
  EXPECT_EQ(s.phase, 3);
  EXPECT_THROW(sim.step(r, s, 0), std::logic_error);
}

TEST(Simulator, EpisodeHasExactlyThreeDecisions) {
  auto data = generate_dataset(small_config(30));
  Simulator sim(small_config());
  for (const auto& r : data) {
    auto s = sim.initial_state(r);
    int steps = 0;
    while (s.phase < sim.num_phases()) {
      EXPECT_EQ(static_cast<int>(s.history.size()), s.phase);
      s = sim.step(r, s, 1).next;
      ++steps;
    }
    EXPECT_EQ(steps, 3);
  }
}

TEST(Simulator, NoiseIsBoundedMeanOneAndDeterministic) {
  auto data = generate_dataset(small_config(2000));
  Simulator sim(small_config());
  double ratio_sum = 0.0;
  for (const auto& r : data) {
    std::vector<int> path{3, 10, 1};
    double clean = r.joint_value(path);
    auto noisy = r.outcome(path, 0.1);
    double total = noisy.fee_ad + noisy.price_o;
    EXPECT_GE(total, 0.9 * clean - 1e-12);
    EXPECT_LE(total, 1.1 * clean + 1e-12);
    ratio_sum += total / clean;
    auto again = r.outcome(path, 0.1);
    EXPECT_EQ(noisy.fee_ad, again.fee_ad);
  }
  EXPECT_NEAR(ratio_sum / data.size(), 1.0, 0.01);
}

TEST(ActionCost, QueueRatioModelCostsAndPurity) {
  EnvConfig cfg = small_config(3);
  auto data = generate_dataset(cfg);
  Simulator sim(cfg);
  const auto& r = data[0];
  auto s0 = sim.initial_state(r);
  auto s1a = sim.step(r, s0, 1).next;
  auto s1b = sim.step(r, s0, 3).next;
  EXPECT_NEAR(action_cost(s1a, 0) / action_cost(s1a, 1), 10.0 / 20.0, 1e-12);
  for (int a = 0; a < 26; ++a) EXPECT_EQ(action_cost(s1a, a), action_cost(s1b, a));
  auto s2 = sim.step(r, s1a, 5).next;
  EXPECT_EQ(action_cost(s2, 0), 0.0);
  EXPECT_EQ(action_cost(s2, 2), 1.0);

  // Two-model convention: simple model free, complex model one unit.
  EnvConfig two = cfg;
  two.actions.model_count = 2;
  two.costs.model_costs = {0.0, 1.0};
  auto d2 = generate_dataset(two);
  Simulator sim2(two);
  auto t = sim2.initial_state(d2[0]);
  t = sim2.step(d2[0], t, 1).next;
  t = sim2.step(d2[0], t, 1).next;
  EXPECT_EQ(action_cost(t, 0), 0.0);
  EXPECT_EQ(action_cost(t, 1), 1.0);
}

TEST(CheckAssumptions, InjectedDipIsDetected) {
  auto data = generate_dataset(small_config(5));
  auto r = data[0];
  for (const auto& c : check_assumptions(r)) EXPECT_TRUE(c.ok());
  r.value[1][10] = 0.5 * r.value[1][9];
  auto checks = check_assumptions(r);
  EXPECT_FALSE(checks[1].value_monotone);
  EXPECT_TRUE(checks[0].ok());
  EXPECT_TRUE(checks[2].ok());
}

TEST(Simulator, HigherCostActionNeverLowersConformingRevenue) {
  auto data = generate_dataset(small_config(200));
  for (const auto& r : data) {
    std::vector<int> path{1, 7, 1};
    double base = r.joint_value(path);
    for (int t = 0; t < 3; ++t) {
      for (int a = 0; a < static_cast<int>(r.cost[t].size()); ++a) {
        if (r.cost[t][a] <= r.cost[t][path[t]]) continue;
        auto alt = path;
        alt[t] = a;
        EXPECT_GE(r.joint_value(alt), base * (1 - 1e-12));
      }
    }
  }
}

TEST(Simulator, MaximalPolicyCostUpperBoundsOthers) {
  auto data = generate_dataset(small_config(300));
  std::mt19937_64 rng(4);
  std::vector<double> max_cost(3, 0.0), rand_cost(3, 0.0);
  for (const auto& r : data) {
    auto mp = max_path(r);
    for (int t = 0; t < 3; ++t) {
      max_cost[t] += r.cost[t][mp[t]];
      std::uniform_int_distribution<int> pick(0, static_cast<int>(r.cost[t].size()) - 1);
      rand_cost[t] += r.cost[t][pick(rng)];
    }
  }
  for (int t = 0; t < 3; ++t) EXPECT_GE(max_cost[t], rand_cost[t]);
}

TEST(StateEncoder, FixedLengthAndOneHots) {
  EnvConfig cfg = small_config(3);
  auto data = generate_dataset(cfg);
  Simulator sim(cfg);
  StateEncoder enc(cfg);
  EXPECT_EQ(enc.dim(), 4 + 3 + 24 + 4 + (4 + 26) + 3);
  auto s = sim.initial_state(data[0]);
  s = sim.step(data[0], s, 2).next;
  auto x = enc.encode(s);
  ASSERT_EQ(static_cast<int>(x.size()), enc.dim());
  EXPECT_EQ(x[7 + data[0].slice], 1.0);
  EXPECT_EQ(x[7 + 24 + 4 + 2], 1.0);          // channel history
  EXPECT_EQ(x[enc.dim() - 3 + 1], 1.0);       // phase one-hot
  s = sim.step(data[0], s, 0).next;
  s = sim.step(data[0], s, 0).next;
  EXPECT_THROW(enc.encode(s), std::invalid_argument);
}

TEST(DatasetFile, RoundTrip) {
  auto data = generate_dataset(small_config(40, 0.3));
  auto path = (std::filesystem::temp_directory_path() / "mpca_dataset_roundtrip.jsonl").string();
  write_dataset(path, data);
  auto back = read_dataset(path);
  std::remove(path.c_str());
  EXPECT_EQ(back, data);
}

TEST(GenerateSlice, DeterministicAndSliced) {
  auto cfg = small_config();
  auto a = generate_slice(cfg, 5, 100, 1000);
  auto b = generate_slice(cfg, 5, 100, 1000);
  EXPECT_EQ(a, b);
  for (const auto& r : a) EXPECT_EQ(r.slice, 5);
  EXPECT_EQ(a.front().id, 1000u);
  EXPECT_THROW(generate_slice(cfg, 24, 1, 0), ConfigError);
}

}  // namespace
}  // namespace mpca
