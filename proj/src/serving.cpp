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

#include "mpca/serving.hpp"

#include "mpca/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mpca {

ServedRequest serve_request(const QPolicy& policy, const Simulator& sim, const SyntheticRequest& req,
                            double clamp_level, const ClampConfig& clamp, bool noisy) {
  ServedRequest out;
  out.id = req.id;
  out.slice = req.slice;
  bool exact = true;
  policy.lambda().lookup(req.slice, &exact);
  out.lambda_fallback = !exact && !policy.lambda().contains(-1);
  PhaseState s = sim.initial_state(req);
  const int T = sim.num_phases();
  for (int t = 0; t < T; ++t) {
    int a = 0;
    policy.decide(t, std::span<const PhaseState>(&s, 1), std::span<int>(&a, 1));
    a = clamp_action(t, a, s.action_costs, clamp_level, req.id, clamp);
    out.path.push_back(a);
    out.costs.push_back(s.action_costs[a]);
    StepResult res = sim.step(req, s, a, noisy);
    if (res.outcome) {
      out.outcome = *res.outcome;
      out.reward = reward(out.outcome, sim.config().reward);
    }
    s = std::move(res.next);
  }
  return out;
}

namespace {

std::vector<SyntheticRequest> slice_traffic(const Simulator& sim, const StreamConfig& cfg, int slice, int visit,
                                            std::uint64_t& next_id) {
  std::vector<SyntheticRequest> reqs;
  int base = 0;
  if (!cfg.replay.empty()) {
    for (const auto& r : cfg.replay) {
      if (r.slice == slice) reqs.push_back(r);
    }
    base = static_cast<int>(reqs.size());
  } else {
    base = cfg.requests_per_slice.at(slice);
  }
  int wanted = base;
  if (cfg.spike.covers(visit)) wanted = static_cast<int>(std::lround(base * cfg.spike.factor));
  const int extra = wanted - static_cast<int>(reqs.size());
  if (extra > 0) {
    auto more = generate_slice(sim.config(), slice, extra, next_id);
    next_id += static_cast<std::uint64_t>(extra);
    reqs.insert(reqs.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    // Spread the extra arrivals over the whole slice.
    std::mt19937_64 rng(hash_combine(next_id, static_cast<std::uint64_t>(slice)));
    std::shuffle(reqs.begin(), reqs.end(), rng);
  } else if (extra < 0) {
    reqs.resize(wanted);
  }
  return reqs;
}

}  // namespace

StreamReport run_stream(const QNetwork& net, const StateEncoder& encoder, const Simulator& sim, LambdaTable table,
                        const BudgetSpec& budgets, const StreamConfig& cfg, QPolicyOptions policy_opts) {
  const int T = sim.num_phases();
  const int S = sim.config().num_slices;
  if (cfg.ticks_per_slice < 1) throw ConfigError("serving: ticks_per_slice must be >= 1");
  if (cfg.replay.empty() && static_cast<int>(cfg.requests_per_slice.size()) != S) {
    throw ConfigError("serving: requests_per_slice needs one entry per slice");
  }
  if (budgets.num_phases() != T || (budgets.num_slices() != 1 && budgets.num_slices() != S)) {
    throw ConfigError("serving: budget table shape mismatch");
  }
  if (cfg.refresh_every < 0) throw ConfigError("serving: refresh_every must be >= 0");
  cfg.pid.validate();
  std::vector<int> order = cfg.slices;
  if (order.empty()) {
    order.resize(S);
    std::iota(order.begin(), order.end(), 0);
  }

  StreamReport report;
  report.total_cost.assign(T, 0.0);
  QPolicy policy(net, encoder, std::move(table), policy_opts);
  ClampGovernor governor(cfg.clamp);
  PidState pid_state;
  LoadMonitor monitor(cfg.load_smoothing, 1.0);
  std::uint64_t next_id = cfg.first_id;
  long tick = 0;
  std::vector<SyntheticRequest> previous;

  for (size_t visit = 0; visit < order.size(); ++visit) {
    const int slice = order[visit];
    if (slice < 0 || slice >= S) throw ConfigError("serving: slice out of range");
    const int bslice = budgets.num_slices() == 1 ? 0 : slice;

    if (cfg.refresh_every > 0 && visit > 0 && visit % cfg.refresh_every == 0 && !previous.empty()) {
      // Near-real-time refresh: correct on the trailing window, scaled to its volume.
      const int expected = cfg.replay.empty() ? cfg.requests_per_slice.at(slice) : static_cast<int>(previous.size());
      const double scale = expected > 0 ? static_cast<double>(previous.size()) / expected : 1.0;
      std::vector<double> row = budgets.slice_row(bslice);
      for (double& c : row) c *= scale;
      std::vector<SyntheticRequest> window = previous;
      for (auto& r : window) r.slice = 0;
      LambdaVector init = policy.lambda().lookup(slice);
      CorrectionResult cr = correct_all(net, encoder, sim, window, BudgetSpec::uniform(row), init, cfg.refresh);
      LambdaTable updated = policy.lambda();
      updated.set(slice, cr.table.lookup(-1));
      policy.set_lambda(std::move(updated));
    }

    std::vector<SyntheticRequest> reqs = slice_traffic(sim, cfg, slice, static_cast<int>(visit), next_id);
    std::vector<double> slice_budget = budgets.slice_row(bslice);
    const double tick_capacity = std::accumulate(slice_budget.begin(), slice_budget.end(), 0.0) / cfg.ticks_per_slice;
    monitor.set_capacity(tick_capacity);

    std::vector<ServedRequest> served(reqs.size());
    const size_t n = reqs.size();
    int clamp_ticks = 0;
    for (int k = 0; k < cfg.ticks_per_slice; ++k) {
      const size_t lo = n * k / cfg.ticks_per_slice;
      const size_t hi = n * (k + 1) / cfg.ticks_per_slice;
      const double level = cfg.control_enabled ? governor.level() : 0.0;
      if (level > 0.0) ++clamp_ticks;
#pragma omp parallel for schedule(static) if (hi - lo >= 64)
      for (long i = static_cast<long>(lo); i < static_cast<long>(hi); ++i) {
        served[i] = serve_request(policy, sim, reqs[i], level, cfg.clamp, cfg.noisy);
      }
      double tick_cost = 0.0;
      for (size_t i = lo; i < hi; ++i) {
        for (double c : served[i].costs) tick_cost += c;
      }
      TickRecord rec;
      rec.tick = tick++;
      rec.slice = slice;
      rec.clamp_level = level;
      rec.load = tick_cost / tick_capacity;
      rec.measurement = monitor.update(tick_cost);
      if (cfg.control_enabled) {
        PidStep step = pid_step(cfg.pid, pid_state, rec.measurement);
        pid_state = step.state;
        rec.output = step.output;
        governor.update(step.output);
      }
      report.ticks.push_back(rec);
    }

    // Reduce in id order so aggregates do not depend on arrival order.
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return served[a].id < served[b].id; });
    SliceReport sr;
    sr.slice = slice;
    sr.requests = static_cast<int>(n);
    sr.cost.assign(T, 0.0);
    for (size_t i : idx) {
      for (int t = 0; t < T; ++t) sr.cost[t] += served[i].costs[t];
      sr.ret += served[i].reward;
      sr.lambda_fallbacks += served[i].lambda_fallback ? 1 : 0;
    }
    for (int t = 0; t < T; ++t) {
      sr.utilization.push_back(sr.cost[t] / slice_budget[t]);
      report.total_cost[t] += sr.cost[t];
    }
    sr.clamp_seconds = clamp_ticks * cfg.slice_seconds / cfg.ticks_per_slice;
    report.total_return += sr.ret;
    report.slices.push_back(std::move(sr));
    previous = std::move(reqs);
  }
  return report;
}

void write_serving_report(const std::string& path, const StreamReport& report, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "# config_hash=" << config_hash << '\n' << std::setprecision(10);
  out << "slice,requests";
  const size_t T = report.total_cost.size();
  for (size_t t = 0; t < T; ++t) out << ",utilization_" << t;
  out << ",return,clamp_seconds\n";
  for (const auto& s : report.slices) {
    out << s.slice << ',' << s.requests;
    for (double u : s.utilization) out << ',' << u;
    out << ',' << s.ret << ',' << s.clamp_seconds << '\n';
  }
}

void write_control_log(const std::string& path, const StreamReport& report, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "# config_hash=" << config_hash << '\n' << std::setprecision(10);
  out << "step,measurement,output,clamp_level\n";
  for (const auto& t : report.ticks) out << t.tick << ',' << t.measurement << ',' << t.output << ',' << t.clamp_level << '\n';
}

}  // namespace mpca
