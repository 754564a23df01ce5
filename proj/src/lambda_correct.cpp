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

#include "mpca/lambda_correct.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace mpca {
namespace {

struct RolloutBuffers {
  std::vector<double> cost, value;  // request-major, T per request
  std::vector<double> returns;
  std::vector<std::vector<int>> paths;
};

EvalResult reduce(const Simulator& sim, std::span<const SyntheticRequest> eval_set, RolloutBuffers& buf,
                  bool keep_decisions) {
  const int T = sim.num_phases();
  const int S = sim.config().num_slices;
  EvalResult r;
  r.requests = static_cast<int>(eval_set.size());
  r.phase_cost.assign(T, 0.0);
  r.phase_value.assign(T, 0.0);
  r.slice_cost.assign(S, std::vector<double>(T, 0.0));
  r.slice_return.assign(S, 0.0);
  r.slice_requests.assign(S, 0);
  for (size_t i = 0; i < eval_set.size(); ++i) {
    const int s = eval_set[i].slice;
    for (int t = 0; t < T; ++t) {
      r.phase_cost[t] += buf.cost[i * T + t];
      r.phase_value[t] += buf.value[i * T + t];
      r.slice_cost[s][t] += buf.cost[i * T + t];
    }
    r.total_return += buf.returns[i];
    r.slice_return[s] += buf.returns[i];
    r.slice_requests[s] += 1;
  }
  if (keep_decisions) r.decisions = std::move(buf.paths);
  return r;
}

void check_actions(std::span<const PhaseState> states, std::span<const int> actions) {
  for (size_t i = 0; i < states.size(); ++i) {
    if (actions[i] < 0 || actions[i] >= static_cast<int>(states[i].action_costs.size())) {
      throw std::out_of_range("policy returned an action outside the phase's action space");
    }
  }
}

void check_slices(const Simulator& sim, std::span<const SyntheticRequest> eval_set) {
  for (const auto& req : eval_set) {
    if (req.slice < 0 || req.slice >= sim.config().num_slices) {
      throw ConfigError("request slice outside the simulator's slice range");
    }
  }
}

}  // namespace

EvalResult evaluate_policy(const Simulator& sim, const Policy& policy, std::span<const SyntheticRequest> eval_set,
                           EvalOptions opts) {
  check_slices(sim, eval_set);
  const int T = sim.num_phases();
  const int n = static_cast<int>(eval_set.size());
  RolloutBuffers buf;
  buf.cost.assign(static_cast<size_t>(n) * T, 0.0);
  buf.value.assign(static_cast<size_t>(n) * T, 0.0);
  buf.returns.assign(n, 0.0);
  buf.paths.assign(n, std::vector<int>(T, 0));
  std::vector<PhaseState> states(n);
  for (int i = 0; i < n; ++i) states[i] = sim.initial_state(eval_set[i]);
  std::vector<int> actions(n);
  const RewardWeights& w = sim.config().reward;
  for (int t = 0; t < T; ++t) {
    policy.decide(t, states, actions);
    check_actions(states, actions);
#pragma omp parallel for schedule(static) if (n >= 256)
    for (int i = 0; i < n; ++i) {
      const int a = actions[i];
      const auto& req = eval_set[i];
      buf.cost[static_cast<size_t>(i) * T + t] = states[i].action_costs[a];
      buf.value[static_cast<size_t>(i) * T + t] = req.value[t][a];
      buf.paths[i][t] = a;
      StepResult res = sim.step(req, states[i], a);
      if (res.outcome) buf.returns[i] = reward(*res.outcome, w);
      states[i] = std::move(res.next);
    }
  }
  return reduce(sim, eval_set, buf, opts.keep_decisions);
}

EvalResult evaluate_policy_serial(const Simulator& sim, const Policy& policy,
                                  std::span<const SyntheticRequest> eval_set, EvalOptions opts) {
  check_slices(sim, eval_set);
  const int T = sim.num_phases();
  const size_t n = eval_set.size();
  RolloutBuffers buf;
  buf.cost.assign(n * T, 0.0);
  buf.value.assign(n * T, 0.0);
  buf.returns.assign(n, 0.0);
  buf.paths.assign(n, std::vector<int>(T, 0));
  for (size_t i = 0; i < n; ++i) {
    const auto& req = eval_set[i];
    PhaseState s = sim.initial_state(req);
    for (int t = 0; t < T; ++t) {
      int a = 0;
      policy.decide(t, std::span<const PhaseState>(&s, 1), std::span<int>(&a, 1));
      check_actions(std::span<const PhaseState>(&s, 1), std::span<const int>(&a, 1));
      buf.cost[i * T + t] = s.action_costs[a];
      buf.value[i * T + t] = req.value[t][a];
      buf.paths[i][t] = a;
      StepResult res = sim.step(req, s, a);
      if (res.outcome) buf.returns[i] = reward(*res.outcome, sim.config().reward);
      s = std::move(res.next);
    }
  }
  return reduce(sim, eval_set, buf, opts.keep_decisions);
}

std::vector<double> utilization(const EvalResult& r, std::span<const double> budgets) {
  return cost_metric(r.phase_cost, budgets).utilization;
}

BisectionResult grid_search_phase(const ProbeFn& probe, double budget, double upper, int points,
                                  double tolerance) {
  if (points < 2) throw std::invalid_argument("grid search needs at least two points");
  if (!(upper > 0.0)) throw std::invalid_argument("grid search needs a positive upper bound");
  BisectionResult r;
  r.used_grid = true;
  for (int k = 0; k < points; ++k) {
    double lambda = upper * k / (points - 1);
    ProbePoint p = probe(lambda);
    p.lambda = lambda;
    r.trace.push_back(p);
    ++r.grid_probes;
  }
  const ProbePoint* best = nullptr;
  for (const auto& p : r.trace) {
    if (p.cost > budget * (1.0 + tolerance)) continue;
    if (!best || p.value > best->value || (p.value == best->value && p.cost < best->cost)) best = &p;
  }
  if (!best) {
    best = &*std::min_element(r.trace.begin(), r.trace.end(),
                              [](const ProbePoint& a, const ProbePoint& b) { return a.cost < b.cost; });
    r.warning = "no feasible point on the lambda grid";
  }
  r.lambda = best->lambda;
  r.cost = best->cost;
  r.value = best->value;
  r.converged = std::abs(r.cost / budget - 1.0) <= tolerance;
  return r;
}

BisectionResult bisect_phase(const ProbeFn& probe, double budget, const BisectionOptions& opts) {
  if (!(budget > 0.0)) throw std::invalid_argument("bisect_phase: budget must be positive");
  if (opts.max_probes < 2) throw std::invalid_argument("bisect_phase: need at least two probes");
  BisectionResult r;
  const double eps = 1e-9 * std::max(1.0, budget);
  auto run = [&](double lambda) {
    ProbePoint p = probe(lambda);
    p.lambda = lambda;
    r.trace.push_back(p);
    ++r.probes;
    return p;
  };
  auto within = [&](const ProbePoint& p) { return std::abs(p.cost / budget - 1.0) <= opts.tolerance; };
  // A probe breaks monotonicity if some earlier probe at smaller lambda was
  // cheaper, or one at larger lambda was dearer.
  auto breaks_monotonicity = [&](const ProbePoint& p) {
    for (size_t k = 0; k + 1 < r.trace.size(); ++k) {
      const auto& q = r.trace[k];
      if (q.lambda < p.lambda && q.cost < p.cost - eps) return true;
      if (q.lambda > p.lambda && q.cost > p.cost + eps) return true;
    }
    return false;
  };
  auto finish = [&](const ProbePoint& p, bool converged) {
    r.lambda = p.lambda;
    r.cost = p.cost;
    r.value = p.value;
    r.converged = converged;
    return r;
  };

  ProbePoint lo = run(0.0);
  if (lo.cost <= budget || within(lo)) {
    r.slack = lo.cost < budget * (1.0 - opts.tolerance);
    return finish(lo, true);
  }

  double upper = opts.initial_upper;
  ProbePoint hi = run(upper);
  bool non_monotone = breaks_monotonicity(hi);
  while (!non_monotone && hi.cost > budget && !within(hi)) {
    if (!std::isnan(opts.min_cost) && hi.cost <= opts.min_cost + eps) {
      r.bracketed = false;
      r.warning = "budget is below the minimal-cost policy; returning the boundary";
      return finish(hi, false);
    }
    if (r.probes >= opts.max_probes) {
      r.bracketed = false;
      r.warning = "probe budget exhausted while bracketing";
      return finish(hi, false);
    }
    lo = hi;
    upper *= 2.0;
    hi = run(upper);
    non_monotone = breaks_monotonicity(hi);
  }
  if (!non_monotone && within(hi)) return finish(hi, true);

  while (!non_monotone && r.probes < opts.max_probes) {
    ProbePoint mid = run(0.5 * (lo.lambda + hi.lambda));
    if (breaks_monotonicity(mid)) {
      non_monotone = true;
      break;
    }
    if (within(mid)) return finish(mid, true);
    if (mid.cost > budget) {
      lo = mid;
    } else {
      hi = mid;
    }
  }

  if (non_monotone) {
    if (!opts.grid_fallback) {
      r.warning = "non-monotone cost curve detected";
      return finish(hi, within(hi));
    }
    double top = 0.0;
    for (const auto& p : r.trace) top = std::max(top, p.lambda);
    BisectionResult g = grid_search_phase(probe, budget, std::max(top, opts.initial_upper), opts.grid_points,
                                          opts.tolerance);
    // Earlier probes stay candidates, so the fallback never loses to them.
    ProbePoint best{g.lambda, g.cost, g.value};
    bool best_feasible = g.cost <= budget * (1.0 + opts.tolerance);
    for (const auto& p : r.trace) {
      if (p.cost > budget * (1.0 + opts.tolerance)) continue;
      if (!best_feasible || p.value > best.value) {
        best = p;
        best_feasible = true;
      }
    }
    r.trace.insert(r.trace.end(), g.trace.begin(), g.trace.end());
    r.grid_probes = g.grid_probes;
    r.used_grid = true;
    r.warning = "non-monotone cost curve; grid search used";
    return finish(best, within(best));
  }
  r.warning = "probe budget exhausted before reaching the tolerance band";
  return finish(hi, within(hi));
}

namespace {

struct GroupOutcome {
  LambdaVector lambda;
  std::vector<BisectionResult> searches;
  std::vector<double> budgets;
};

GroupOutcome correct_group(const QPolicy& scorer, const Simulator& sim, std::span<const SyntheticRequest> reqs,
                           std::span<const double> budgets, const LambdaVector& initial,
                           const BisectionOptions& bopts) {
  const int T = sim.num_phases();
  GroupOutcome out{initial, {}, {budgets.begin(), budgets.end()}};
  std::vector<PhaseState> states;
  states.reserve(reqs.size());
  for (const auto& r : reqs) states.push_back(sim.initial_state(r));
  const int n = static_cast<int>(states.size());
  std::vector<int> actions(n);
  for (int t = 0; t < T; ++t) {
    PhaseScores scores = scorer.scores(t, states);
    double min_cost = 0.0;
    for (int i = 0; i < n; ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (size_t a = 0; a < states[i].action_costs.size(); ++a) {
        if (!scores.masks.empty() && !scores.masks[i][a]) continue;
        m = std::min(m, states[i].action_costs[a]);
      }
      min_cost += m;
    }
    ProbeFn probe = [&](double lambda) {
      ProbePoint p;
      for (int i = 0; i < n; ++i) {
        int a = greedy_action(scores, i, states[i].action_costs, lambda);
        p.cost += states[i].action_costs[a];
        p.value += reqs[i].value[t][a];
      }
      return p;
    };
    BisectionOptions o = bopts;
    o.min_cost = min_cost;
    BisectionResult res = bisect_phase(probe, budgets[t], o);
    out.lambda.set(t, res.lambda);
    for (int i = 0; i < n; ++i) actions[i] = greedy_action(scores, i, states[i].action_costs, res.lambda);
    for (int i = 0; i < n; ++i) states[i] = sim.step(reqs[i], states[i], actions[i]).next;
    out.searches.push_back(std::move(res));
  }
  return out;
}

}  // namespace

CorrectionResult correct_all(const QNetwork& net, const StateEncoder& encoder, const Simulator& sim,
                             std::span<const SyntheticRequest> eval_set, const BudgetSpec& budgets,
                             const LambdaVector& initial, const CorrectionOptions& opts) {
  const int T = sim.num_phases();
  if (eval_set.empty()) throw std::invalid_argument("correct_all: empty evaluation set");
  if (budgets.num_phases() != T) throw ConfigError("budget table phase count mismatch");
  if (initial.size() != T) throw ConfigError("initial lambda size mismatch");
  const bool per_slice = budgets.num_slices() > 1;
  if (per_slice && budgets.num_slices() != sim.config().num_slices) {
    throw ConfigError("budget table slice count must be 1 or match the environment");
  }

  CorrectionResult result;
  QPolicy scorer(net, encoder, LambdaTable(initial), opts.policy);
  std::vector<std::pair<int, std::vector<SyntheticRequest>>> groups;
  if (per_slice) {
    std::vector<std::vector<SyntheticRequest>> by_slice(budgets.num_slices());
    for (const auto& r : eval_set) by_slice.at(r.slice).push_back(r);
    for (int s = 0; s < budgets.num_slices(); ++s) {
      if (!by_slice[s].empty()) groups.emplace_back(s, std::move(by_slice[s]));
    }
  } else {
    groups.emplace_back(-1, std::vector<SyntheticRequest>(eval_set.begin(), eval_set.end()));
  }

  for (auto& [slice, reqs] : groups) {
    auto row = budgets.slice_row(per_slice ? slice : 0);
    GroupOutcome g = correct_group(scorer, sim, reqs, row, initial, opts.bisection);
    result.table.set(slice, g.lambda);
    for (int t = 0; t < T; ++t) {
      PhaseCorrection pc;
      pc.slice = slice;
      pc.phase = t;
      pc.requests = static_cast<int>(reqs.size());
      pc.budget = row[t];
      pc.search = std::move(g.searches[t]);
      result.all_converged = result.all_converged && pc.search.converged;
      result.phases.push_back(std::move(pc));
    }
  }

  QPolicy corrected(net, encoder, result.table, opts.policy);
  result.final_eval = evaluate_policy(sim, corrected, eval_set);
  for (auto& pc : result.phases) {
    double realized = pc.slice < 0 ? result.final_eval.phase_cost[pc.phase]
                                   : result.final_eval.slice_cost[pc.slice][pc.phase];
    pc.utilization = realized / pc.budget;
    result.residual_drift = std::max(result.residual_drift, std::abs(pc.utilization - pc.search.cost / pc.budget));
  }
  return result;
}

namespace {

void write_rows(const std::string& path, const std::vector<std::tuple<int, int, double, double>>& rows,
                const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
  out << "slice,phase,lambda,utilization\n" << std::setprecision(17);
  for (const auto& [s, t, l, u] : rows) out << s << ',' << t << ',' << l << ',' << u << '\n';
}

}  // namespace

void write_lambda_table(const std::string& path, const CorrectionResult& result, const std::string& config_hash) {
  std::vector<std::tuple<int, int, double, double>> rows;
  for (const auto& pc : result.phases) rows.emplace_back(pc.slice, pc.phase, pc.search.lambda, pc.utilization);
  write_rows(path, rows, config_hash);
}

void write_lambda_table(const std::string& path, const LambdaTable& table, const std::string& config_hash) {
  std::vector<std::tuple<int, int, double, double>> rows;
  for (const auto& [slice, lambda] : table.entries()) {
    for (int t = 0; t < lambda.size(); ++t) rows.emplace_back(slice, t, lambda[t], std::nan(""));
  }
  write_rows(path, rows, config_hash);
}

LambdaTable read_lambda_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  int line_no = 0;
  // Skip comment lines such as the config hash.
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind('#', 0) != 0) break;
  }
  if (line.rfind("slice,phase,lambda", 0) != 0) throw std::runtime_error(path + ": not a lambda table");
  std::map<int, std::map<int, double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ',')) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed row");
    }
    rows[std::stoi(a)][std::stoi(b)] = std::stod(c);
  }
  LambdaTable table;
  for (const auto& [slice, phases] : rows) {
    std::vector<double> v;
    for (const auto& [t, l] : phases) {
      if (t != static_cast<int>(v.size())) throw std::runtime_error(path + ": missing phase rows");
      v.push_back(l);
    }
    table.set(slice, LambdaVector(std::move(v)));
  }
  if (table.empty()) throw std::runtime_error(path + ": empty lambda table");
  return table;
}

}  // namespace mpca
