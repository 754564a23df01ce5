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

#include "mpca/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mpca {

int StaticRule::action(int phase) const {
  switch (phase) {
    case kChannelPhase: return channel_strategy;
    case kQueuePhase: return queue_bucket;
    case kModelPhase: return model;
    default: throw std::out_of_range("static rule: phase out of range");
  }
}

void StaticRule::validate(const ActionSpaceSpec& spec) const {
  for (int t = 0; t < 3; ++t) {
    if (action(t) < 0 || action(t) >= spec.phase_size(t)) {
      throw ConfigError("static rule action out of range in phase " + std::to_string(t));
    }
  }
}

void StaticPolicy::decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const {
  std::fill(actions.begin(), actions.begin() + static_cast<long>(states.size()), rule_.action(phase));
}

LinearPolicyParams::LinearPolicyParams(int dim, std::vector<int> sizes)
    : feature_dim(dim), action_sizes(std::move(sizes)), theta(action_sizes.size() * static_cast<size_t>(dim), 0.0) {}

std::span<const double> LinearPolicyParams::phase_weights(int phase) const {
  return std::span(theta).subspan(static_cast<size_t>(phase) * feature_dim, feature_dim);
}

int score_to_action(double score, int num_actions) {
  if (num_actions < 1) throw std::invalid_argument("score_to_action: empty action grid");
  if (!std::isfinite(score)) return score > 0 ? num_actions - 1 : 0;
  double x = std::floor(0.5 * (num_actions - 1) + score + 0.5);
  return static_cast<int>(std::clamp(x, 0.0, static_cast<double>(num_actions - 1)));
}

int linear_act(const LinearPolicyParams& params, std::span<const double> features, int phase) {
  if (static_cast<int>(features.size()) != params.feature_dim) {
    throw std::invalid_argument("linear_act: feature width mismatch");
  }
  auto w = params.phase_weights(phase);
  double score = std::inner_product(w.begin(), w.end(), features.begin(), 0.0);
  return score_to_action(score, params.action_sizes.at(phase));
}

LinearPolicy::LinearPolicy(LinearPolicyParams params, const StateEncoder& encoder)
    : params_(std::move(params)), encoder_(encoder) {
  if (params_.feature_dim != encoder.dim()) throw ConfigError("linear policy width does not match the encoder");
}

void LinearPolicy::decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const {
  std::vector<double> x(encoder_.dim());
  for (size_t i = 0; i < states.size(); ++i) {
    encoder_.encode(states[i], x);
    actions[i] = linear_act(params_, x, phase);
  }
}

void CemConfig::validate() const {
  if (iterations < 1) throw ConfigError("cem: iterations must be >= 1");
  if (samples < 1) throw ConfigError("cem: samples must be >= 1");
  if (retain < 1 || retain > samples) throw ConfigError("cem: retain must be in [1, samples]");
  if (!(init_sigma >= 0.0) || !(sigma_floor >= 0.0)) throw ConfigError("cem: sigma must be non-negative");
  if (!(penalty >= 0.0)) throw ConfigError("cem: penalty must be non-negative");
}

double cem_penalized_reward(double value, std::span<const double> costs, std::span<const double> budgets,
                            double penalty) {
  if (costs.size() != budgets.size()) throw std::invalid_argument("cem_penalized_reward: size mismatch");
  double r = value;
  for (size_t t = 0; t < costs.size(); ++t) r -= penalty * std::max(costs[t] - budgets[t], 0.0);
  return r;
}

namespace {

double norm(std::span<const double> v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

}  // namespace

CemResult cem_search(const CemConfig& cfg, int dim, const CemObjective& objective) {
  cfg.validate();
  if (dim < 1) throw std::invalid_argument("cem_search: dimension must be >= 1");
  CemResult res;
  res.mu.assign(dim, cfg.init_mu);
  res.sigma.assign(dim, cfg.init_sigma);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> cand(cfg.samples, std::vector<double>(dim));
  std::vector<CemScore> scores(cfg.samples);
  std::vector<int> order(cfg.samples);

  for (int it = 0; it < cfg.iterations; ++it) {
    for (auto& c : cand) {
      for (int d = 0; d < dim; ++d) c[d] = res.mu[d] + res.sigma[d] * normal(rng);
    }
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < cfg.samples; ++k) scores[k] = objective(cand[k]);

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a].reward > scores[b].reward; });
    for (int k : order) {
      if (!scores[k].feasible) continue;
      if (!res.found_feasible || scores[k].raw_return > res.best_score.raw_return) {
        res.found_feasible = true;
        res.best_score = scores[k];
        res.best_theta = cand[k];
      }
    }

    CemIteration log;
    log.iteration = it;
    log.best_reward = scores[order[0]].reward;
    for (int d = 0; d < dim; ++d) {
      double mean = 0.0;
      for (int e = 0; e < cfg.retain; ++e) mean += cand[order[e]][d];
      mean /= cfg.retain;
      double var = 0.0;
      for (int e = 0; e < cfg.retain; ++e) {
        double dev = cand[order[e]][d] - mean;
        var += dev * dev;
      }
      res.mu[d] = mean;
      res.sigma[d] = std::sqrt(var / cfg.retain) + cfg.sigma_floor;
    }
    for (int e = 0; e < cfg.retain; ++e) log.elite_mean_reward += scores[order[e]].reward;
    log.elite_mean_reward /= cfg.retain;
    log.mu_norm = norm(res.mu);
    log.sigma_norm = norm(res.sigma);
    res.history.push_back(log);
  }
  return res;
}

CemPolicyResult cem_train(const CemConfig& cfg, const Simulator& sim, const StateEncoder& encoder,
                          std::span<const SyntheticRequest> train_set, std::span<const double> budgets) {
  if (train_set.empty()) throw std::invalid_argument("cem_train: empty training set");
  if (static_cast<int>(budgets.size()) != sim.num_phases()) throw ConfigError("cem_train: budget size mismatch");
  LinearPolicyParams shape(encoder.dim(), sim.config().actions.phase_sizes());
  CemObjective objective = [&](std::span<const double> theta) {
    LinearPolicyParams p = shape;
    std::copy(theta.begin(), theta.end(), p.theta.begin());
    LinearPolicy policy(std::move(p), encoder);
    EvalResult r = evaluate_policy(sim, policy, train_set);
    CemScore s;
    s.raw_return = r.total_return;
    s.reward = cem_penalized_reward(r.total_return, r.phase_cost, budgets, cfg.penalty);
    for (size_t t = 0; t < budgets.size(); ++t) s.feasible = s.feasible && r.phase_cost[t] <= budgets[t];
    return s;
  };
  CemPolicyResult out;
  out.search = cem_search(cfg, shape.size(), objective);
  out.params = shape;
  if (out.search.found_feasible) {
    std::copy(out.search.best_theta.begin(), out.search.best_theta.end(), out.params.theta.begin());
  } else {
    std::copy(out.search.mu.begin(), out.search.mu.end(), out.params.theta.begin());
  }
  LinearPolicy final_policy(out.params, encoder);
  out.eval = evaluate_policy(sim, final_policy, train_set);
  return out;
}

DcafResult dcaf_allocate(std::span<const SyntheticRequest> requests, double queue_budget, const StaticRule& rule,
                         const RewardWeights& weights, const BisectionOptions& opts) {
  DcafResult out;
  out.budget = queue_budget;
  const size_t n = requests.size();
  std::vector<std::vector<double>> value(n);
  double min_cost = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const auto& r = requests[i];
    const auto& cost = r.cost[kQueuePhase];
    value[i].resize(cost.size());
    for (size_t a = 0; a < cost.size(); ++a) {
      std::vector<int> path{rule.channel_strategy, static_cast<int>(a), rule.model};
      value[i][a] = r.joint_reward(path, weights);
    }
    min_cost += *std::min_element(cost.begin(), cost.end());
  }
  auto choose = [&](size_t i, double lambda) {
    return kernels::calibrated_argmax(value[i], requests[i].cost[kQueuePhase], lambda);
  };
  ProbeFn probe = [&](double lambda) {
    ProbePoint p;
    for (size_t i = 0; i < n; ++i) {
      int a = choose(i, lambda);
      p.cost += requests[i].cost[kQueuePhase][a];
      p.value += value[i][a];
    }
    return p;
  };
  BisectionOptions o = opts;
  o.min_cost = min_cost;
  out.search = bisect_phase(probe, queue_budget, o);
  out.lambda = out.search.lambda;
  for (size_t i = 0; i < n; ++i) {
    int a = choose(i, out.lambda);
    out.queue_actions[requests[i].id] = a;
    out.queue_cost += requests[i].cost[kQueuePhase][a];
    out.value += value[i][a];
  }
  return out;
}

std::vector<DcafResult> dcaf_by_slice(std::span<const SyntheticRequest> requests, const BudgetSpec& budgets,
                                      const StaticRule& rule, const RewardWeights& weights,
                                      const BisectionOptions& opts) {
  std::vector<DcafResult> out;
  if (budgets.num_slices() == 1) {
    out.push_back(dcaf_allocate(requests, budgets.at(0, kQueuePhase), rule, weights, opts));
    return out;
  }
  std::vector<std::vector<SyntheticRequest>> by_slice(budgets.num_slices());
  for (const auto& r : requests) by_slice.at(r.slice).push_back(r);
  for (int s = 0; s < budgets.num_slices(); ++s) {
    if (by_slice[s].empty()) continue;
    out.push_back(dcaf_allocate(by_slice[s], budgets.at(s, kQueuePhase), rule, weights, opts));
  }
  return out;
}

DcafPolicy::DcafPolicy(StaticRule rule, std::span<const DcafResult> allocations) : rule_(rule) {
  for (const auto& a : allocations) queue_actions_.insert(a.queue_actions.begin(), a.queue_actions.end());
}

void DcafPolicy::decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const {
  for (size_t i = 0; i < states.size(); ++i) {
    if (phase != kQueuePhase) {
      actions[i] = rule_.action(phase);
      continue;
    }
    auto it = queue_actions_.find(states[i].request_id);
    actions[i] = it != queue_actions_.end() ? it->second : rule_.queue_bucket;
  }
}

}  // namespace mpca
