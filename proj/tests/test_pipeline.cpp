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
#include <filesystem>
#include <fstream>

#include "mpca/pipeline.hpp"

namespace mpca {
namespace {

using nlohmann::json;

ExperimentConfig tiny_config() {
  json doc = {
      {"env", {{"train_requests", 600}, {"num_slices", 4}, {"seed", 3}}},
      {"eval_requests", 800},
      {"train", {{"algo", "ddqn"}, {"iterations", 40}, {"batch_size", 64}, {"hidden", {16, 8}}, {"eval_interval", 20}}},
      {"cem", {{"iterations", 3}, {"samples", 8}, {"retain", 2}, {"requests", 200}}},
  };
  return config_from_json(doc);
}

TEST(Config, RoundTripIsExact) {
  const ExperimentConfig cfg = tiny_config();
  const json dumped = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(dumped);
  EXPECT_EQ(config_to_json(back), dumped);
  EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(Config, HashIsStableAndSensitive) {
  const std::string h = config_hash(tiny_config());
  EXPECT_EQ(h.size(), 16u);
  EXPECT_EQ(h.find_first_not_of("0123456789abcdef"), std::string::npos);
  EXPECT_EQ(config_hash(tiny_config()), h);
  ExperimentConfig other = tiny_config();
  other.train.learning_rate *= 2.0;
  EXPECT_NE(config_hash(other), h);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(config_from_json(json{{"evaluation_requests", 10}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"train", {{"iters", 10}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"serving", {{"pid", {{"gain", 1.0}}}}}}), ConfigError);
}

TEST(Config, InvalidValuesAreRejected) {
  EXPECT_THROW(config_from_json(json{{"eval_requests", 0}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"eval_requests", "many"}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"train", {{"algo", "sarsa"}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"behavior", {{"random_fraction", 1.5}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"serving", {{"slices", {99}}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"env", {{"seed", -1}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json::array()), ConfigError);
}

TEST(Config, RootSeedReseedsEveryStage) {
  ExperimentConfig a = tiny_config();
  ExperimentConfig b = tiny_config();
  a.apply_seed(1);
  b.apply_seed(2);
  EXPECT_NE(a.env.seed, b.env.seed);
  EXPECT_NE(a.eval_seed, b.eval_seed);
  EXPECT_NE(a.train.seed, b.train.seed);
  EXPECT_NE(a.cem.seed, b.cem.seed);
  EXPECT_NE(a.behavior.seed, b.behavior.seed);
  EXPECT_NE(a.env.seed, a.eval_seed);
  ExperimentConfig c = tiny_config();
  c.apply_seed(1);
  EXPECT_EQ(config_hash(a), config_hash(c));

  json doc = config_to_json(tiny_config());
  doc["seed"] = 1;
  EXPECT_EQ(config_from_json(doc).train.seed, a.train.seed);
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "mpca_pipeline_cfg.json";
  std::ofstream(path) << config_to_json(tiny_config()).dump(2);
  EXPECT_EQ(config_hash(load_config(path.string())), config_hash(tiny_config()));
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_config(path.string()), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path.string()), ConfigError);
}

TEST(StaticBudgets, UnvisitedSlicesGetOneRequestOfCost) {
  EvalResult r;
  r.requests = 4;
  r.phase_cost = {4.0, 2.0, 1.0};
  r.slice_cost = {{3.0, 1.5, 0.5}, {0.0, 0.0, 0.0}, {1.0, 0.5, 0.5}};
  r.slice_requests = {3, 0, 1};
  r.slice_return = {0.0, 0.0, 0.0};
  const BudgetSpec b = static_budgets(r, 4);
  EXPECT_EQ(b.num_slices(), 4);
  EXPECT_EQ(b.at(0, 0), 3.0);
  EXPECT_EQ(b.at(1, 0), 1.0);
  EXPECT_EQ(b.at(1, 1), 0.5);
  EXPECT_EQ(b.at(3, 2), 0.25);
  EXPECT_EQ(b.at(2, 1), 0.5);
}

class ExperimentTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { exp_ = new Experiment(tiny_config()); }
  static void TearDownTestSuite() {
    delete exp_;
    exp_ = nullptr;
  }
  static Experiment* exp_;
};
Experiment* ExperimentTest::exp_ = nullptr;

TEST_F(ExperimentTest, DatasetsFollowTheConfig) {
  EXPECT_EQ(exp_->train_set().size(), 600u);
  EXPECT_EQ(exp_->eval_set().size(), 800u);
  EXPECT_NE(exp_->train_set()[0].user, exp_->eval_set()[0].user);
  Experiment again(tiny_config());
  EXPECT_EQ(again.train_set()[5].user, exp_->train_set()[5].user);
  EXPECT_EQ(again.hash(), exp_->hash());
}

TEST_F(ExperimentTest, StaticRowSitsAtFullUtilizationAndZeroScore) {
  StaticPolicy policy(exp_->config().static_rule);
  const ResultRow row = exp_->row("static", exp_->evaluate(policy));
  for (double u : row.utilization) EXPECT_DOUBLE_EQ(u, 1.0);
  EXPECT_EQ(row.normalized, 0.0);
  EXPECT_EQ(row.ret, exp_->static_eval().total_return);
  const BudgetSpec& b = exp_->budgets();
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(b.total(t), exp_->static_eval().phase_cost[t], 1e-6);
}

TEST_F(ExperimentTest, NormalizedScoreNeedsAnExpertAnchor) {
  RandomPolicy random(1);
  const ResultRow row = exp_->row("random", exp_->evaluate(random));
  EXPECT_TRUE(std::isnan(row.normalized));
}

TEST_F(ExperimentTest, EndToEndMethodRun) {
  const MethodRun run = exp_->run_method(exp_->config().train);
  EXPECT_EQ(run.correction.final_eval.requests, 800);
  for (const auto& [slice, lam] : run.correction.table.entries()) {
    for (double l : lam.values()) EXPECT_GE(l, 0.0);
  }
  if (run.correction.all_converged) {
    for (const auto& pc : run.correction.phases) EXPECT_LE(pc.search.cost, pc.budget * (1.0 + 0.005) + 1e-9);
  }
  const auto rows = std::vector<ResultRow>{exp_->row("ddqn", run.correction.final_eval)};
  const auto path = std::filesystem::temp_directory_path() / "mpca_rows.csv";
  write_result_rows(path.string(), rows, exp_->hash());
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first, "# config_hash=" + exp_->hash());
  std::filesystem::remove(path);
  EXPECT_NE(render_result_table(rows).find("ddqn"), std::string::npos);
}

}  // namespace
}  // namespace mpca
