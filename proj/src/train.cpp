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

#include "mpca/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "mpca/lambda_correct.hpp"
#include "mpca/rng.hpp"

namespace mpca {

Algo parse_algo(const std::string& name) {
  if (name == "ddqn") return Algo::kDdqn;
  if (name == "bcq") return Algo::kBcq;
  if (name == "rem") return Algo::kRem;
  throw ConfigError("unknown algorithm '" + name + "' (expected ddqn, bcq or rem)");
}

std::string algo_name(Algo algo) {
  switch (algo) {
    case Algo::kDdqn: return "ddqn";
    case Algo::kBcq: return "bcq";
    case Algo::kRem: return "rem";
  }
  return "?";
}

std::vector<TransitionRecord> collect_behavior_data(const Simulator& sim, std::span<const SyntheticRequest> requests,
                                                    const BehaviorMix& mix) {
  if (!(mix.random_fraction >= 0.0 && mix.random_fraction <= 1.0)) {
    throw ConfigError("random_fraction must be in [0, 1]");
  }
  if (mix.random_fraction < 1.0 && mix.superior == nullptr) {
    throw ConfigError("a superior policy is required when random_fraction < 1");
  }
  RandomPolicy random(hash_combine(mix.seed, 0x72616e64ULL));
  const int T = sim.num_phases();
  std::vector<TransitionRecord> out;
  out.reserve(requests.size() * T);
  for (const auto& req : requests) {
    bool explore = to_unit_interval(hash_combine(mix.seed, req.id)) < mix.random_fraction;
    const Policy& policy = explore ? static_cast<const Policy&>(random) : *mix.superior;
    PhaseState s = sim.initial_state(req);
    for (int t = 0; t < T; ++t) {
      int a = 0;
      policy.decide(t, std::span<const PhaseState>(&s, 1), std::span<int>(&a, 1));
      StepResult res = sim.step(req, s, a, mix.noisy_rewards);
      TransitionRecord rec;
      rec.state = s;
      rec.action = a;
      rec.cost = action_cost(s, a);
      rec.phase = t;
      rec.terminal = res.outcome.has_value();
      rec.reward = rec.terminal ? reward(*res.outcome, sim.config().reward) : 0.0;
      rec.next = res.next;
      rec.behavior = explore ? "random" : mix.superior_tag;
      s = std::move(res.next);
      out.push_back(std::move(rec));
    }
  }
  return out;
}

namespace {

nlohmann::json state_to_json(const PhaseState& s) {
  return {{"phase", s.phase},
          {"request_id", s.request_id},
          {"slice", s.slice},
          {"user", s.user},
          {"context", s.context},
          {"summary", {s.summary.retrieved, s.summary.truncated, s.summary.score_mean, s.summary.score_max}},
          {"history", s.history},
          {"action_costs", s.action_costs}};
}

PhaseState state_from_json(const nlohmann::json& j) {
  PhaseState s;
  j.at("phase").get_to(s.phase);
  j.at("request_id").get_to(s.request_id);
  j.at("slice").get_to(s.slice);
  j.at("user").get_to(s.user);
  j.at("context").get_to(s.context);
  auto sm = j.at("summary").get<std::vector<double>>();
  if (sm.size() != 4) throw std::runtime_error("transition record: malformed summary");
  s.summary = {sm[0], sm[1], sm[2], sm[3]};
  j.at("history").get_to(s.history);
  j.at("action_costs").get_to(s.action_costs);
  return s;
}

}  // namespace

void write_transitions(const std::string& path, std::span<const TransitionRecord> records,
                       const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  if (!config_hash.empty()) out << nlohmann::json{{"config_hash", config_hash}}.dump() << '\n';
  for (const auto& r : records) {
    nlohmann::json j = {{"state", state_to_json(r.state)}, {"action", r.action},     {"reward", r.reward},
                        {"next", state_to_json(r.next)},   {"terminal", r.terminal}, {"cost", r.cost},
                        {"phase", r.phase},                {"behavior", r.behavior}};
    out << j.dump() << '\n';
  }
}

std::vector<TransitionRecord> read_transitions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<TransitionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j.contains("config_hash")) continue;
    TransitionRecord r;
    r.state = state_from_json(j.at("state"));
    j.at("action").get_to(r.action);
    j.at("reward").get_to(r.reward);
    r.next = state_from_json(j.at("next"));
    j.at("terminal").get_to(r.terminal);
    j.at("cost").get_to(r.cost);
    j.at("phase").get_to(r.phase);
    j.at("behavior").get_to(r.behavior);
    out.push_back(std::move(r));
  }
  return out;
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lambda_updates < 0) throw ConfigError("lambda_updates must be >= 0");
  if (!(lambda_lr >= 0.0)) throw ConfigError("lambda_lr must be >= 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (target_sync < 1) throw ConfigError("target_sync must be >= 1");
  if (!(bcq_tau >= 0.0 && bcq_tau <= 1.0)) throw ConfigError("bcq_tau must be in [0, 1]");
  if (rem_heads < 1) throw ConfigError("rem_heads must be >= 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (hidden.empty()) throw ConfigError("hidden must list at least one layer");
}

double ddqn_target(double reward, bool terminal, double gamma, std::span<const double> q_online_next,
                   std::span<const double> q_target_next, std::span<const double> next_costs, double lambda_next,
                   std::span<const unsigned char> mask) {
  if (terminal) return reward;
  int a = act(q_online_next, next_costs, lambda_next, mask);
  return reward + gamma * q_target_next[a];
}

double adaptive_lambda_step(double lambda, double batch_cost, double budget, double alpha) {
  if (!(budget > 0.0)) return lambda;
  return std::max(0.0, lambda + alpha * (batch_cost / budget - 1.0));
}

double batch_budget(double rate, int count) { return count > 0 ? rate * count : 0.0; }

std::pair<double, double> LambdaPhaseBatch::greedy_totals(double lambda) const {
  double cost = 0.0, value = 0.0;
  for (int i = 0; i < q.rows; ++i) {
    std::span<const unsigned char> mask;
    if (!masks.empty()) mask = masks[i];
    int a = act(q.row(i), costs[i], lambda, mask);
    cost += costs[i][a];
    value += q(i, a);
  }
  return {cost, value};
}

LambdaVector inner_lambda_loop(LambdaVector lambda, std::span<const LambdaPhaseBatch> batches, int rounds,
                               double alpha) {
  if (static_cast<int>(batches.size()) != lambda.size()) {
    throw std::invalid_argument("inner_lambda_loop: one batch per phase required");
  }
  for (int k = 0; k < rounds; ++k) {
    std::vector<double> costs(batches.size(), 0.0);
    for (size_t t = 0; t < batches.size(); ++t) {
      if (batches[t].q.rows == 0 || !(batches[t].budget > 0.0)) continue;
      costs[t] = batches[t].greedy_totals(lambda[static_cast<int>(t)]).first;
    }
    for (size_t t = 0; t < batches.size(); ++t) {
      if (batches[t].q.rows == 0 || !(batches[t].budget > 0.0)) continue;
      const int p = static_cast<int>(t);
      lambda.set(p, adaptive_lambda_step(lambda[p], costs[t], batches[t].budget, alpha));
    }
  }
  return lambda;
}

TrainingData prepare_training_data(std::span<const TransitionRecord> records, const StateEncoder& encoder,
                                   const ActionSpaceSpec& actions) {
  TrainingData d;
  d.dim = encoder.dim();
  d.action_sizes = actions.phase_sizes();
  const int n = static_cast<int>(records.size());
  int next_count = 0;
  for (const auto& r : records) next_count += r.terminal ? 0 : 1;
  d.states.resize(n, d.dim);
  d.next_states.resize(next_count, d.dim);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    const auto& r = records[i];
    if (r.phase < 0 || r.phase >= static_cast<int>(d.action_sizes.size()) || r.state.phase != r.phase) {
      throw std::invalid_argument("transition " + std::to_string(i) + ": inconsistent phase");
    }
    if (r.action < 0 || r.action >= d.action_sizes[r.phase]) {
      throw std::invalid_argument("transition " + std::to_string(i) + ": action out of range");
    }
    if (!r.terminal && r.reward != 0.0) {
      throw std::invalid_argument("transition " + std::to_string(i) + ": reward on a non-terminal step");
    }
    encoder.encode(r.state, d.states.row(i));
    d.phase.push_back(r.phase);
    d.action.push_back(r.action);
    d.reward.push_back(r.reward);
    d.costs.push_back(r.state.action_costs);
    if (r.terminal) {
      d.next_row.push_back(-1);
      d.next_costs.emplace_back();
    } else {
      encoder.encode(r.next, d.next_states.row(k));
      d.next_row.push_back(k++);
      d.next_costs.push_back(r.next.action_costs);
    }
  }
  return d;
}

std::vector<double> cost_rates(const EvalResult& eval) {
  if (eval.requests == 0) throw std::invalid_argument("cost_rates: empty evaluation");
  std::vector<double> out;
  for (double c : eval.phase_cost) out.push_back(c / eval.requests);
  return out;
}

namespace {

Matrix gather(const Matrix& src, std::span<const int> rows) {
  Matrix m(static_cast<int>(rows.size()), src.cols);
  for (size_t i = 0; i < rows.size(); ++i) {
    auto from = src.row(rows[i]);
    std::copy(from.begin(), from.end(), m.row(static_cast<int>(i)).begin());
  }
  return m;
}

std::vector<std::vector<unsigned char>> masks_of(const ForwardCache& cache, double tau) {
  std::vector<std::vector<unsigned char>> out;
  if (cache.imitation_logits.rows == 0) return out;
  Matrix probs = softmax_rows(cache.imitation_logits);
  out.reserve(probs.rows);
  for (int i = 0; i < probs.rows; ++i) out.push_back(bcq_mask(probs.row(i), tau));
  return out;
}

}  // namespace

TrainResult train(const TrainingData& data, const TrainConfig& cfg, std::span<const double> budget_rates,
                  const EvalContext* eval, const EvalCallback& on_eval) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  const int T = static_cast<int>(data.action_sizes.size());
  if (static_cast<int>(budget_rates.size()) != T) throw ConfigError("train: need one budget rate per phase");
  if (eval && (!eval->sim || !eval->encoder || eval->eval_set.empty() ||
               static_cast<int>(eval->budgets.size()) != T)) {
    throw std::invalid_argument("train: incomplete evaluation context");
  }
  const auto start = std::chrono::steady_clock::now();

  QNetworkConfig qc;
  qc.input_dim = data.dim;
  qc.hidden = cfg.hidden;
  qc.action_sizes = data.action_sizes;
  qc.heads = cfg.algo == Algo::kRem ? cfg.rem_heads : 1;
  qc.imitation = cfg.algo == Algo::kBcq;
  qc.seed = hash_combine(cfg.seed, 0x6e6574ULL);
  QNetwork online(qc);
  QNetwork target = online;
  AdamOptimizer adam(online.params().size(), cfg.learning_rate);
  std::vector<double> grad(online.params().size());
  std::mt19937_64 rng(hash_combine(cfg.seed, 0x73616d70ULL));
  std::uniform_int_distribution<int> pick(0, data.size() - 1);
  const double tau = cfg.bcq_tau;

  TrainResult result;
  result.lambda = LambdaVector(T);
  std::vector<std::vector<int>> rows(T);
  for (long step = 1; step <= cfg.iterations; ++step) {
    for (auto& r : rows) r.clear();
    for (int k = 0; k < cfg.batch_size; ++k) {
      int i = pick(rng);
      rows[data.phase[i]].push_back(i);
    }
    const RemMixture beta = cfg.algo == Algo::kRem ? RemMixture::random(qc.heads, rng) : RemMixture::uniform(1);

    std::vector<PhaseBatch> batches(T);
    for (int t = 0; t < T; ++t) {
      PhaseBatch& b = batches[t];
      b.phase = t;
      b.states = gather(data.states, rows[t]);
      b.targets.resize(rows[t].size());
      std::vector<int> next_rows, next_pos;
      for (size_t k = 0; k < rows[t].size(); ++k) {
        const int i = rows[t][k];
        b.actions.push_back(data.action[i]);
        b.targets[k] = data.reward[i];
        if (data.next_row[i] >= 0) {
          next_rows.push_back(data.next_row[i]);
          next_pos.push_back(static_cast<int>(k));
        }
      }
      if (next_rows.empty()) continue;
      if (t + 1 >= T) throw std::invalid_argument("train: non-terminal transition in the last phase");
      Matrix next = gather(data.next_states, next_rows);
      ForwardCache on_cache, tg_cache;
      online.forward(next, t + 1, on_cache);
      target.forward(next, t + 1, tg_cache);
      const int n_next = data.action_sizes[t + 1];
      Matrix q_on = mix_heads(on_cache.heads, n_next, beta);
      Matrix q_tg = mix_heads(tg_cache.heads, n_next, beta);
      auto masks = masks_of(on_cache, tau);
      for (size_t k = 0; k < next_rows.size(); ++k) {
        const int i = rows[t][next_pos[k]];
        std::span<const unsigned char> mask;
        if (!masks.empty()) mask = masks[k];
        b.targets[next_pos[k]] = ddqn_target(data.reward[i], false, cfg.gamma, q_on.row(static_cast<int>(k)),
                                             q_tg.row(static_cast<int>(k)), data.next_costs[i],
                                             result.lambda[t + 1], mask);
      }
    }

    LossBreakdown loss = online.loss_and_gradient(batches, beta, grad);
    adam.step(online.params().values(), grad);
    if (!online.params().all_finite()) {
      throw std::runtime_error("train: non-finite parameters after step " + std::to_string(step));
    }
    result.final_loss = loss.total();

    if (cfg.adaptive_lambda && cfg.lambda_updates > 0) {
      std::vector<LambdaPhaseBatch> lb(T);
      for (int t = 0; t < T; ++t) {
        if (rows[t].empty()) continue;
        ForwardCache cache;
        online.forward(batches[t].states, t, cache);
        lb[t].q = mix_heads(cache.heads, data.action_sizes[t], beta);
        lb[t].masks = masks_of(cache, tau);
        for (int i : rows[t]) lb[t].costs.push_back(data.costs[i]);
        lb[t].budget = batch_budget(budget_rates[t], static_cast<int>(rows[t].size()));
      }
      result.lambda = inner_lambda_loop(result.lambda, lb, cfg.lambda_updates, cfg.lambda_lr);
    }

    if (step % cfg.target_sync == 0) {
      target = online;
      ++result.target_syncs;
    }

    if (step % cfg.eval_interval == 0 || step == cfg.iterations) {
      if (eval) {
        QPolicy policy(online, *eval->encoder, LambdaTable(result.lambda), {.bcq_tau = tau});
        EvalResult er = evaluate_policy(*eval->sim, policy, eval->eval_set);
        auto util = utilization(er, eval->budgets);
        for (int t = 0; t < T; ++t) {
          result.telemetry.push_back({step, t, util[t], er.total_return, result.lambda[t], loss.total()});
        }
      }
      if (on_eval) on_eval(step, online, result.lambda);
    }
  }
  result.params = online.params();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_telemetry(const std::string& path, std::span<const TelemetryRow> rows, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "# config_hash=" << config_hash << '\n';
  out << "step,phase,utilization,return,lambda,loss\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.step << ',' << r.phase << ',' << r.utilization << ',' << r.ret << ',' << r.lambda << ',' << r.loss << '\n';
  }
}

}  // namespace mpca
