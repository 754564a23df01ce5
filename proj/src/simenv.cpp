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

#include "mpca/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "mpca/rng.hpp"

namespace mpca {
namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Action indices of a phase sorted by cost (stable for equal costs).
std::vector<int> cost_order(std::span<const double> costs) {
  std::vector<int> idx(costs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return costs[a] < costs[b]; });
  return idx;
}

void inject_violation(SyntheticRequest& req, std::mt19937_64& rng) {
  // Candidates are (phase, action) pairs whose cheaper neighbour has positive
  // value; halving relative to that neighbour breaks value monotonicity.
  std::vector<std::pair<int, int>> candidates;
  std::vector<int> predecessor_of;
  for (int t = 0; t < req.num_phases(); ++t) {
    auto order = cost_order(req.cost[t]);
    for (size_t k = 1; k < order.size(); ++k) {
      int prev = order[k - 1];
      int cur = order[k];
      if (req.cost[t][cur] > req.cost[t][prev] && req.value[t][prev] > 0.0) {
        candidates.emplace_back(t, cur);
        predecessor_of.push_back(prev);
      }
    }
  }
  if (candidates.empty()) return;
  std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
  size_t k = pick(rng);
  auto [t, a] = candidates[k];
  req.value[t][a] = 0.5 * req.value[t][predecessor_of[k]];
}

SyntheticRequest make_request(const EnvConfig& cfg, std::uint64_t id, int slice,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticRequest req;
  req.id = id;
  req.slice = slice;
  req.user.resize(cfg.user_dim);
  for (double& x : req.user) x = normal(rng);
  req.context.resize(cfg.context_dim);
  for (double& x : req.context) x = unit(rng);

  const auto& u = req.user;
  const auto& c = req.context;
  double daily = std::sin(2.0 * std::numbers::pi * slice / cfg.num_slices);
  req.value_scale = std::exp(0.55 * u[0] + 0.35 * u[1] + 0.25 * daily + 0.4 * (c[0] - 0.5));
  req.fee_share = 0.15 + 0.2 * c[0];

  const double span = cfg.p_max - cfg.p_min;
  const double exponent[3] = {cfg.p_min + span * normal_cdf(u[2]),
                              cfg.p_min + span * normal_cdf(u[3]), cfg.p_min + span * c[1]};
  const double model_floor = cfg.model_floor_min + (cfg.model_floor_max - cfg.model_floor_min) * c[2];

  const int T = cfg.actions.num_phases;
  req.value.resize(T);
  req.cost.resize(T);
  for (int t = 0; t < T; ++t) {
    req.cost[t] = cfg.phase_costs(t);
    double cmax = *std::max_element(req.cost[t].begin(), req.cost[t].end());
    req.value[t].resize(req.cost[t].size());
    for (size_t a = 0; a < req.cost[t].size(); ++a) {
      double x = cmax > 0.0 ? req.cost[t][a] / cmax : 1.0;
      double g = std::pow(x, exponent[t]);
      if (t == kModelPhase) g = model_floor + (1.0 - model_floor) * g;
      req.value[t][a] = req.value_scale * g;
    }
  }

  std::uniform_int_distribution<int> pool(300, 600);
  req.pool_sizes.resize(cfg.actions.channel_count);
  for (int& p : req.pool_sizes) p = pool(rng);
  req.noise_seed = rng();

  bool violate = unit(rng) < cfg.violation_fraction;
  if (violate) inject_violation(req, rng);
  return req;
}

}  // namespace

void EnvConfig::validate() const {
  actions.validate();
  if (static_cast<int>(costs.channel_unit_costs.size()) != actions.channel_count) {
    throw ConfigError("channel_unit_costs needs one entry per channel");
  }
  for (double c : costs.channel_unit_costs) {
    if (!(c > 0.0)) throw ConfigError("channel unit costs must be positive");
  }
  if (!(costs.queue_cost_per_item > 0.0)) throw ConfigError("queue_cost_per_item must be positive");
  if (static_cast<int>(costs.model_costs.size()) != actions.model_count) {
    throw ConfigError("model_costs needs one entry per model");
  }
  for (double c : costs.model_costs) {
    if (!(c >= 0.0)) throw ConfigError("model costs must be non-negative");
  }
  if (num_requests < 0) throw ConfigError("num_requests must be >= 0");
  if (num_slices < 1) throw ConfigError("num_slices must be >= 1");
  if (!traffic_profile.empty()) {
    if (static_cast<int>(traffic_profile.size()) != num_slices) {
      throw ConfigError("traffic_profile needs one weight per slice");
    }
    for (double w : traffic_profile) {
      if (!(w >= 0.0)) throw ConfigError("traffic weights must be non-negative");
    }
    if (std::accumulate(traffic_profile.begin(), traffic_profile.end(), 0.0) <= 0.0) {
      throw ConfigError("traffic profile sums to zero");
    }
  }
  if (!(traffic_amplitude >= 0.0 && traffic_amplitude < 1.0)) {
    throw ConfigError("traffic_amplitude must be in [0, 1)");
  }
  if (!(p_min > 0.0 && p_min <= p_max && p_max < 1.0)) {
    throw ConfigError("value-curve exponents must satisfy 0 < p_min <= p_max < 1");
  }
  if (!(model_floor_min >= 0.0 && model_floor_min <= model_floor_max && model_floor_max <= 1.0)) {
    throw ConfigError("model floor range must lie in [0, 1]");
  }
  if (!(violation_fraction >= 0.0 && violation_fraction < 1.0)) {
    throw ConfigError("violation_fraction must be in [0, 1)");
  }
  if (!(noise_scale >= 0.0 && noise_scale < 1.0)) throw ConfigError("noise_scale must be in [0, 1)");
  if (user_dim < 4) throw ConfigError("user_dim must be >= 4");
  if (context_dim < 3) throw ConfigError("context_dim must be >= 3");
  reward.validate();
}

std::vector<double> EnvConfig::slice_weights() const {
  std::vector<double> w(num_slices);
  if (!traffic_profile.empty()) {
    w = traffic_profile;
  } else {
    for (int s = 0; s < num_slices; ++s) {
      w[s] = 1.0 + traffic_amplitude * std::sin(2.0 * std::numbers::pi * s / num_slices);
    }
  }
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return w;
}

std::vector<double> EnvConfig::phase_costs(int phase) const {
  std::vector<double> out(actions.phase_size(phase));
  switch (phase) {
    case kChannelPhase:
      for (int s = 0; s < actions.channel_strategies(); ++s) {
        auto bits = strategy_indicator(s, actions.channel_count);
        double c = 0.0;
        for (int ch = 0; ch < actions.channel_count; ++ch) c += bits[ch] * costs.channel_unit_costs[ch];
        out[s] = c;
      }
      break;
    case kQueuePhase:
      for (int b = 0; b < actions.queue_buckets; ++b) {
        out[b] = queue_action_length(actions, b) * costs.queue_cost_per_item;
      }
      break;
    case kModelPhase:
      out = costs.model_costs;
      break;
  }
  return out;
}

double SyntheticRequest::factor(int phase, int action) const {
  return value_scale > 0.0 ? value.at(phase).at(action) / value_scale : 0.0;
}

double SyntheticRequest::joint_value(std::span<const int> path) const {
  if (static_cast<int>(path.size()) != num_phases()) {
    throw std::invalid_argument("joint_value: path length must equal the number of phases");
  }
  double v = value_scale;
  for (int t = 0; t < num_phases(); ++t) v *= factor(t, path[t]);
  return v;
}

double SyntheticRequest::reward_scale(const RewardWeights& w) const {
  return w.k1 * fee_share + w.k2 * (1.0 - fee_share);
}

RevenueOutcome SyntheticRequest::outcome(std::span<const int> path, double noise_scale) const {
  double revenue = joint_value(path);
  if (noise_scale > 0.0) {
    std::uint64_t h = noise_seed;
    for (int a : path) h = hash_combine(h, static_cast<std::uint64_t>(a));
    revenue *= 1.0 + noise_scale * (2.0 * to_unit_interval(h) - 1.0);
  }
  return {.fee_ad = fee_share * revenue, .price_o = (1.0 - fee_share) * revenue};
}

std::vector<SyntheticRequest> generate_dataset(const EnvConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto weights = cfg.slice_weights();
  std::discrete_distribution<int> slice_dist(weights.begin(), weights.end());
  std::vector<SyntheticRequest> out;
  out.reserve(cfg.num_requests);
  for (int i = 0; i < cfg.num_requests; ++i) {
    int slice = slice_dist(rng);
    out.push_back(make_request(cfg, static_cast<std::uint64_t>(i), slice, rng));
  }
  return out;
}

std::vector<SyntheticRequest> generate_slice(const EnvConfig& cfg, int slice, int count,
                                             std::uint64_t first_id) {
  cfg.validate();
  if (slice < 0 || slice >= cfg.num_slices) throw ConfigError("slice out of range");
  std::mt19937_64 rng(hash_combine(hash_combine(cfg.seed, static_cast<std::uint64_t>(slice)), first_id));
  std::vector<SyntheticRequest> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(make_request(cfg, first_id + i, slice, rng));
  return out;
}

std::vector<AssumptionCheck> check_assumptions(const SyntheticRequest& req) {
  constexpr double kRelTol = 1e-12;
  std::vector<AssumptionCheck> out(req.num_phases());
  for (int t = 0; t < req.num_phases(); ++t) {
    const auto& cost = req.cost[t];
    const auto& value = req.value[t];
    for (size_t a = 0; a < cost.size(); ++a) {
      for (size_t b = 0; b < cost.size(); ++b) {
        if (!(cost[a] < cost[b])) continue;
        if (value[a] > value[b] * (1.0 + kRelTol)) out[t].value_monotone = false;
        if (cost[a] > 0.0 && value[a] / cost[a] * (1.0 + kRelTol) < value[b] / cost[b]) {
          out[t].ratio_monotone = false;
        }
      }
    }
  }
  return out;
}

bool conforms(const SyntheticRequest& req) {
  auto checks = check_assumptions(req);
  return std::all_of(checks.begin(), checks.end(), [](const AssumptionCheck& c) { return c.ok(); });
}

Simulator::Simulator(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

PhaseState Simulator::initial_state(const SyntheticRequest& req) const {
  PhaseState s;
  s.phase = 0;
  s.request_id = req.id;
  s.slice = req.slice;
  s.user = req.user;
  s.context = req.context;
  s.action_costs = req.cost.at(0);
  return s;
}

StepResult Simulator::step(const SyntheticRequest& req, const PhaseState& state, int action,
                           bool noisy) const {
  const int T = num_phases();
  if (state.phase >= T) throw std::logic_error("step: state is terminal");
  if (state.request_id != req.id) throw std::invalid_argument("step: state belongs to another request");
  if (action < 0 || action >= static_cast<int>(req.cost[state.phase].size())) {
    throw std::out_of_range("step: action " + std::to_string(action) + " out of range for phase " +
                            std::to_string(state.phase));
  }

  StepResult result;
  PhaseState& next = result.next;
  next = state;
  next.history.push_back(action);
  next.phase = state.phase + 1;
  ListSummary& sm = next.summary;
  double g = req.factor(state.phase, action);
  switch (state.phase) {
    case kChannelPhase: {
      auto bits = strategy_indicator(action, cfg_.actions.channel_count);
      double pool = 0.0;
      for (size_t ch = 0; ch < bits.size(); ++ch) pool += bits[ch] * req.pool_sizes[ch];
      sm.retrieved = pool;
      sm.score_max = g;
      sm.score_mean = g;
      break;
    }
    case kQueuePhase:
      sm.truncated = std::min<double>(queue_action_length(cfg_.actions, action), sm.retrieved);
      sm.score_mean = sm.score_max * g;
      break;
    default:
      sm.score_mean *= g;
      break;
  }
  if (next.phase < T) {
    next.action_costs = req.cost[next.phase];
  } else {
    next.action_costs.clear();
    result.outcome = req.outcome(next.history, noisy ? cfg_.noise_scale : 0.0);
  }
  return result;
}

double action_cost(const PhaseState& state, int action) { return state.action_costs.at(action); }

StateEncoder::StateEncoder(const EnvConfig& cfg)
    : user_dim_(cfg.user_dim),
      context_dim_(cfg.context_dim),
      num_slices_(cfg.num_slices),
      num_phases_(cfg.actions.num_phases) {
  for (int t = 0; t + 1 < num_phases_; ++t) history_sizes_.push_back(cfg.actions.phase_size(t));
  dim_ = user_dim_ + context_dim_ + num_slices_ + 4 + num_phases_;
  for (int n : history_sizes_) dim_ += n;
}

void StateEncoder::encode(const PhaseState& state, std::span<double> out) const {
  if (static_cast<int>(out.size()) != dim_) throw std::invalid_argument("encode: output size mismatch");
  if (state.phase < 0 || state.phase >= num_phases_) {
    throw std::invalid_argument("encode: terminal or invalid phase");
  }
  std::fill(out.begin(), out.end(), 0.0);
  size_t k = 0;
  for (int i = 0; i < user_dim_; ++i) out[k++] = state.user.at(i);
  for (int i = 0; i < context_dim_; ++i) out[k++] = state.context.at(i);
  out[k + state.slice] = 1.0;
  k += num_slices_;
  out[k++] = state.summary.retrieved / 1000.0;
  out[k++] = state.summary.truncated / 250.0;
  out[k++] = state.summary.score_mean;
  out[k++] = state.summary.score_max;
  for (size_t h = 0; h < history_sizes_.size(); ++h) {
    if (h < state.history.size()) out[k + state.history[h]] = 1.0;
    k += history_sizes_[h];
  }
  out[k + state.phase] = 1.0;
}

std::vector<double> StateEncoder::encode(const PhaseState& state) const {
  std::vector<double> out(dim_);
  encode(state, out);
  return out;
}

namespace {

nlohmann::json request_to_json(const SyntheticRequest& r) {
  return {{"id", r.id},           {"slice", r.slice},     {"user", r.user},
          {"context", r.context}, {"value_scale", r.value_scale},
          {"fee_share", r.fee_share}, {"value", r.value}, {"cost", r.cost},
          {"pool_sizes", r.pool_sizes}, {"noise_seed", r.noise_seed}};
}

SyntheticRequest request_from_json(const nlohmann::json& j) {
  SyntheticRequest r;
  j.at("id").get_to(r.id);
  j.at("slice").get_to(r.slice);
  j.at("user").get_to(r.user);
  j.at("context").get_to(r.context);
  j.at("value_scale").get_to(r.value_scale);
  j.at("fee_share").get_to(r.fee_share);
  j.at("value").get_to(r.value);
  j.at("cost").get_to(r.cost);
  j.at("pool_sizes").get_to(r.pool_sizes);
  j.at("noise_seed").get_to(r.noise_seed);
  return r;
}

}  // namespace

void write_dataset(const std::string& path, std::span<const SyntheticRequest> requests, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  if (!config_hash.empty()) out << nlohmann::json{{"config_hash", config_hash}}.dump() << '\n';
  for (const auto& r : requests) out << request_to_json(r).dump() << '\n';
}

std::vector<SyntheticRequest> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<SyntheticRequest> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j.contains("config_hash")) continue;
    out.push_back(request_from_json(j));
  }
  return out;
}

}  // namespace mpca
