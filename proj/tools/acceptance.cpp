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

// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mpca/baselines.hpp"
#include "mpca/control.hpp"
#include "mpca/kernels.hpp"
#include "mpca/lambda_correct.hpp"
#include "mpca/pipeline.hpp"
#include "mpca/qnet.hpp"
#include "mpca/serving.hpp"
#include "mpca/train.hpp"

#ifndef MPCA_SOURCE_DIR
#define MPCA_SOURCE_DIR "."
#endif

namespace mpca {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << x;
  return os.str();
}

std::string pct(double ratio, int precision = 2) { return fmt(100.0 * ratio, precision) + "%"; }

// ---------------------------------------------------------------------------
// Shared training runs. Several criteria look at the same five-seed study, so
// it is computed once on first use.

struct SeedStudy {
  std::uint64_t seed = 0;
  std::unique_ptr<Experiment> exp;
  MethodRun rem;        // REM + adaptive lambda, corrected
  MethodRun ddqn_l;     // DDQN + adaptive lambda, corrected
  MethodRun ddqn;       // DDQN without multiplier updates, corrected
  EvalResult dcaf;
  EvalResult stat;
  double seconds = 0.0;
};

class Study {
 public:
  Study(ExperimentConfig base, int seeds) : base_(std::move(base)), seeds_(seeds) {}

  const ExperimentConfig& base() const { return base_; }

  SeedStudy& seed(int index) {
    while (static_cast<int>(runs_.size()) <= index) runs_.push_back(run(static_cast<int>(runs_.size()) + 1));
    return runs_[index];
  }
  int seeds() const { return seeds_; }

 private:
  SeedStudy run(int seed) {
    const auto start = Clock::now();
    ExperimentConfig cfg = base_;
    cfg.apply_seed(static_cast<std::uint64_t>(seed));
    SeedStudy s;
    s.seed = static_cast<std::uint64_t>(seed);
    s.exp = std::make_unique<Experiment>(cfg);
    Experiment& e = *s.exp;
    const auto records = e.collect();

    TrainConfig rem = cfg.train;
    rem.algo = Algo::kRem;
    rem.adaptive_lambda = true;
    TrainConfig ddqn_l = cfg.train;
    ddqn_l.algo = Algo::kDdqn;
    ddqn_l.adaptive_lambda = true;
    TrainConfig ddqn = ddqn_l;
    ddqn.adaptive_lambda = false;
    s.rem = e.run_method(rem, records);
    s.ddqn_l = e.run_method(ddqn_l, records);
    s.ddqn = e.run_method(ddqn, records);

    const auto alloc = e.dcaf();
    DcafPolicy dcaf(cfg.static_rule, alloc);
    s.dcaf = e.evaluate(dcaf);
    s.stat = e.static_eval();
    s.seconds = seconds_since(start);
    std::cerr << "  seed " << seed << ": rem " << fmt(s.rem.correction.final_eval.total_return, 1) << ", ddqn+lambda "
              << fmt(s.ddqn_l.correction.final_eval.total_return, 1) << ", ddqn "
              << fmt(s.ddqn.correction.final_eval.total_return, 1) << ", dcaf " << fmt(s.dcaf.total_return, 1)
              << ", static " << fmt(s.stat.total_return, 1) << " (" << fmt(s.seconds, 1) << " s)\n";
    return s;
  }

  ExperimentConfig base_;
  int seeds_;
  std::vector<SeedStudy> runs_;
};

// ---------------------------------------------------------------------------
// 1. Lagrangian greedy against the exhaustive constrained optimum.

using Path = std::array<int, 3>;

// Joint value of every path of one request, indexed [a0][a1][a2].
std::vector<double> value_table(const SyntheticRequest& r, const std::array<int, 3>& n) {
  std::vector<double> v(static_cast<size_t>(n[0]) * n[1] * n[2]);
  for (int a = 0; a < n[0]; ++a) {
    for (int b = 0; b < n[1]; ++b) {
      for (int c = 0; c < n[2]; ++c) {
        const std::array<int, 3> path{a, b, c};
        v[(static_cast<size_t>(a) * n[1] + b) * n[2] + c] = r.joint_value(path);
      }
    }
  }
  return v;
}

// Phase-by-phase selection through the Constraint Layer, where the q-value
// of each action is the request's exact Lagrangian value-to-go.
Path lagrangian_greedy(const SyntheticRequest& r, const std::vector<double>& v, const std::array<int, 3>& n,
                       const std::array<double, 3>& lambda) {
  auto at = [&](int a, int b, int c) { return v[(static_cast<size_t>(a) * n[1] + b) * n[2] + c]; };
  auto tail = [&](int a, int b) {
    double best = -INFINITY;
    for (int c = 0; c < n[2]; ++c) best = std::max(best, at(a, b, c) - lambda[2] * r.cost[2][c]);
    return best;
  };
  std::vector<double> q0(n[0]);
  for (int a = 0; a < n[0]; ++a) {
    double best = -INFINITY;
    for (int b = 0; b < n[1]; ++b) best = std::max(best, tail(a, b) - lambda[1] * r.cost[1][b]);
    q0[a] = best;
  }
  const int a0 = act(q0, r.cost[0], lambda[0]);
  std::vector<double> q1(n[1]);
  for (int b = 0; b < n[1]; ++b) q1[b] = tail(a0, b);
  const int a1 = act(q1, r.cost[1], lambda[1]);
  std::vector<double> q2(n[2]);
  for (int c = 0; c < n[2]; ++c) q2[c] = at(a0, a1, c);
  const int a2 = act(q2, r.cost[2], lambda[2]);
  return {a0, a1, a2};
}

// Costs of every request on a common integer grid.
struct IntegerCosts {
  std::array<std::vector<std::vector<int>>, 3> units;  // [phase][request][action]
  std::array<double, 3> unit{};
};

IntegerCosts integer_costs(std::span<const SyntheticRequest> reqs) {
  IntegerCosts out;
  for (int t = 0; t < 3; ++t) {
    long g = 0;
    std::vector<std::vector<long>> milli;
    for (const auto& r : reqs) {
      std::vector<long> row;
      for (double c : r.cost[t]) {
        const double scaled = c * 1000.0;
        const long m = std::lround(scaled);
        if (std::abs(scaled - m) > 1e-6) throw std::runtime_error("costs are not multiples of 0.001");
        row.push_back(m);
        g = std::gcd(g, m);
      }
      milli.push_back(std::move(row));
    }
    if (g == 0) g = 1;
    out.unit[t] = g / 1000.0;
    for (const auto& row : milli) {
      std::vector<int> u;
      for (long m : row) u.push_back(static_cast<int>(m / g));
      out.units[t].push_back(std::move(u));
    }
  }
  return out;
}

// Dynamic program over (cost used per phase): exact optimum of the joint
// problem with per-phase capacities `cap` (inclusive).
double exhaustive_optimum(std::span<const SyntheticRequest> reqs, const std::vector<std::vector<double>>& values,
                          const std::array<int, 3>& n, const std::array<double, 3>& cap) {
  const IntegerCosts ic = integer_costs(reqs);
  std::array<int, 3> dim{};
  for (int t = 0; t < 3; ++t) dim[t] = static_cast<int>(std::floor(cap[t] / ic.unit[t] + 1e-9)) + 1;
  const size_t states = static_cast<size_t>(dim[0]) * dim[1] * dim[2];
  if (states > 50'000'000) throw std::runtime_error("exhaustive search space too large");
  std::vector<double> cur(states, -1.0), next(states);
  cur[0] = 0.0;
  for (size_t i = 0; i < reqs.size(); ++i) {
    std::fill(next.begin(), next.end(), -1.0);
    const auto& u0 = ic.units[0][i];
    const auto& u1 = ic.units[1][i];
    const auto& u2 = ic.units[2][i];
    for (int c0 = 0; c0 < dim[0]; ++c0) {
      for (int c1 = 0; c1 < dim[1]; ++c1) {
        for (int c2 = 0; c2 < dim[2]; ++c2) {
          const double base = cur[(static_cast<size_t>(c0) * dim[1] + c1) * dim[2] + c2];
          if (base < 0.0) continue;
          for (int a = 0; a < n[0]; ++a) {
            const int n0 = c0 + u0[a];
            if (n0 >= dim[0]) continue;
            for (int b = 0; b < n[1]; ++b) {
              const int n1 = c1 + u1[b];
              if (n1 >= dim[1]) continue;
              for (int c = 0; c < n[2]; ++c) {
                const int n2 = c2 + u2[c];
                if (n2 >= dim[2]) continue;
                double& slot = next[(static_cast<size_t>(n0) * dim[1] + n1) * dim[2] + n2];
                slot = std::max(slot, base + values[i][(static_cast<size_t>(a) * n[1] + b) * n[2] + c]);
              }
            }
          }
        }
      }
    }
    std::swap(cur, next);
  }
  return *std::max_element(cur.begin(), cur.end());
}

Outcome duality_gap() {
  const auto start = Clock::now();
  constexpr int kInstances = 50;
  constexpr double kBand = 0.005;
  // Budgets are what a fixed mid-range rule spends, as in the full pipeline.
  const StaticRule rule{3, 2, 1};
  double ratio_sum = 0.0, worst = INFINITY;
  int per_instance = 0, within_budget = 0;
  for (int inst = 0; inst < kInstances; ++inst) {
    EnvConfig env;
    env.num_requests = 8;
    env.num_slices = 1;
    env.actions.queue_buckets = 5;
    env.seed = 1000 + static_cast<std::uint64_t>(inst);
    const auto reqs = generate_dataset(env);
    const std::array<int, 3> n{env.actions.phase_size(0), env.actions.phase_size(1), env.actions.phase_size(2)};
    std::array<double, 3> budget{}, cap{};
    for (int t = 0; t < 3; ++t) {
      for (const auto& r : reqs) budget[t] += r.cost[t][rule.action(t)];
      cap[t] = budget[t] * (1.0 + kBand);
    }
    std::vector<std::vector<double>> values;
    double mean_scale = 0.0;
    for (const auto& r : reqs) {
      values.push_back(value_table(r, n));
      mean_scale += r.value_scale / reqs.size();
    }
    const double opt = exhaustive_optimum(reqs, values, n, cap);

    std::vector<double> grid{0.0};
    for (int k = 0; k < 40; ++k) grid.push_back(mean_scale * 1e-3 * std::pow(1e5, k / 39.0));
    double best = -1.0;
    for (double l0 : grid) {
      for (double l1 : grid) {
        for (double l2 : grid) {
          const std::array<double, 3> lambda{l0, l1, l2};
          std::array<double, 3> cost{};
          double value = 0.0;
          for (size_t i = 0; i < reqs.size(); ++i) {
            const Path p = lagrangian_greedy(reqs[i], values[i], n, lambda);
            for (int t = 0; t < 3; ++t) cost[t] += reqs[i].cost[t][p[t]];
            value += values[i][(static_cast<size_t>(p[0]) * n[1] + p[1]) * n[2] + p[2]];
          }
          bool ok = true;
          for (int t = 0; t < 3; ++t) ok = ok && cost[t] <= cap[t] + 1e-12;
          if (ok) best = std::max(best, value);
        }
      }
    }
    if (best >= 0.0) ++within_budget;
    const double ratio = opt > 0.0 ? std::max(best, 0.0) / opt : 1.0;
    ratio_sum += ratio;
    worst = std::min(worst, ratio);
    per_instance += ratio >= 0.95;
  }
  const double mean = ratio_sum / kInstances;
  const double secs = seconds_since(start);
  Outcome o;
  o.pass = mean >= 0.95 && within_budget == kInstances && secs < 60.0;
  o.detail = "mean greedy/optimum " + pct(mean) + " (>= 95%), worst " + pct(worst) + ", " +
             std::to_string(per_instance) + "/50 instances >= 95%, budgets met " + std::to_string(within_budget) +
             "/50, " + fmt(secs, 1) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Multiplier step with greedy re-selection on conforming batches.

LambdaPhaseBatch conforming_batch(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> rows_d(2, 60), actions_d(2, 8);
  const int rows = rows_d(rng), actions = actions_d(rng);
  LambdaPhaseBatch b;
  b.q.resize(rows, actions);
  double max_total = 0.0;
  for (int i = 0; i < rows; ++i) {
    std::vector<double> c(actions);
    double acc = 0.0;
    for (int a = 0; a < actions; ++a) {
      acc += 0.05 + u(rng);
      c[a] = acc;
    }
    // Concave increasing value: value non-decreasing and value/cost
    // non-increasing in cost.
    const double v = 0.5 + 5.0 * u(rng);
    const double p = 0.1 + 0.85 * u(rng);
    for (int a = 0; a < actions; ++a) b.q(i, a) = v * std::pow(c[a] / c.back(), p);
    max_total += c.back();
    b.costs.push_back(std::move(c));
  }
  b.budget = (0.05 + 0.9 * u(rng)) * max_total;
  return b;
}

Outcome lemma_suite() {
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  constexpr int kBatches = 1000, kRounds = 10;
  long checks = 0, violations = 0;
  int above = 0, below = 0, equal = 0;
  for (int k = 0; k < kBatches; ++k) {
    LambdaPhaseBatch b = conforming_batch(rng);
    const double alpha = 0.01 + u(rng);
    double lambda = u(rng) < 0.2 ? 0.0 : 3.0 * u(rng);
    const LambdaVector start(std::vector<double>{lambda});
    for (int r = 0; r < kRounds; ++r) {
      const auto [cost, value] = b.greedy_totals(lambda);
      const double next = adaptive_lambda_step(lambda, cost, b.budget, alpha);
      const auto [cost2, value2] = b.greedy_totals(next);
      ++checks;
      if (cost > b.budget) {
        ++above;
        violations += !(cost2 <= cost);
      } else if (cost < b.budget) {
        ++below;
        violations += !(value2 >= value);
      } else {
        ++equal;
        violations += next != lambda;
      }
      lambda = next;
    }
    // The K-round loop must agree with the rounds replayed above.
    violations += inner_lambda_loop(start, std::vector<LambdaPhaseBatch>{b}, kRounds, alpha)[0] != lambda;
    // Budget exactly at the greedy cost: the multiplier must not move.
    LambdaPhaseBatch tight = b;
    tight.budget = b.greedy_totals(lambda).first;
    if (tight.budget > 0.0) {
      ++checks;
      ++equal;
      violations += adaptive_lambda_step(lambda, tight.greedy_totals(lambda).first, tight.budget, alpha) != lambda;
    }
  }
  Outcome o;
  o.pass = violations == 0;
  o.detail = std::to_string(checks) + " checks over " + std::to_string(kBatches) + " batches (" +
             std::to_string(above) + " above, " + std::to_string(below) + " below, " + std::to_string(equal) +
             " at budget), " + std::to_string(violations) + " violations";
  return o;
}

// ---------------------------------------------------------------------------
// 3. Cost and value curves in one multiplier with the others fixed.

Outcome monotonicity(Study& study) {
  SeedStudy& s = study.seed(0);
  Experiment& e = *s.exp;
  int nonconforming = 0;
  for (const auto& r : e.eval_set()) nonconforming += !conforms(r);
  const QNetwork net(s.rem.training.params);
  const LambdaVector fixed = s.rem.training.lambda;
  int breaks = 0;
  std::string ranges;
  for (int t = 0; t < 3; ++t) {
    double prev_cost = INFINITY, prev_value = INFINITY, first_cost = 0.0, last_cost = 0.0;
    for (int k = 0; k < 100; ++k) {
      LambdaVector l = fixed;
      l.set(t, 3.0 * k / 99.0);
      QPolicy policy(net, e.encoder(), LambdaTable(l));
      const EvalResult r = e.evaluate(policy);
      const double c = r.phase_cost[t], v = r.phase_value[t];
      breaks += c > prev_cost || v > prev_value;
      prev_cost = c;
      prev_value = v;
      if (k == 0) first_cost = c;
      last_cost = c;
    }
    ranges += (t ? ", " : "") + std::string("phase ") + std::to_string(t) + " cost " + fmt(first_cost, 1) + "->" +
              fmt(last_cost, 1);
  }
  Outcome o;
  o.pass = breaks == 0 && nonconforming == 0;
  o.detail = std::to_string(breaks) + " increases over 3 x 100 grid points on " +
             std::to_string(e.eval_set().size()) + " conforming requests (" + ranges + ")";
  return o;
}

// ---------------------------------------------------------------------------
// 4. Post-training correction band.

Outcome correction_band(Study& study) {
  SeedStudy& s = study.seed(0);
  const CorrectionResult& c = s.rem.correction;
  const BudgetSpec& budgets = s.exp->budgets();
  bool band = true;
  std::string utils;
  for (int t = 0; t < 3; ++t) {
    const double u = c.final_eval.phase_cost[t] / budgets.total(t);
    band = band && u >= 0.995 && u <= 1.005;
    utils += (t ? "/" : "") + pct(u);
  }
  int max_probes = 0, in_band = 0;
  for (const auto& pc : c.phases) {
    max_probes = std::max(max_probes, pc.search.probes);
    in_band += pc.utilization >= 0.995 && pc.utilization <= 1.005;
  }
  Outcome o;
  o.pass = band && max_probes <= 30 && s.exp->eval_set().size() == 10000;
  o.detail = "utilization " + utils + " on " + std::to_string(s.exp->eval_set().size()) +
             " requests, max probes " + std::to_string(max_probes) + " (<= 30), " + std::to_string(in_band) + "/" +
             std::to_string(c.phases.size()) + " slice-phases in band, drift " + pct(c.residual_drift, 3);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Constraint tracking during training.

Outcome training_tracking(Study& study) {
  SeedStudy& s = study.seed(0);
  const TrainConfig& tc = study.base().train;
  const auto& tel = s.ddqn_l.training.telemetry;
  double worst = 0.0;
  int rows = 0;
  for (const auto& row : tel) {
    if (3 * row.step <= tc.iterations) continue;
    worst = std::max(worst, std::abs(row.utilization - 1.0));
    ++rows;
  }
  const auto& plain = s.ddqn.uncorrected;
  double plain_max = 0.0;
  std::string plain_utils;
  for (int t = 0; t < 3; ++t) {
    const double u = plain.phase_cost[t] / s.stat.phase_cost[t];
    plain_max = std::max(plain_max, u);
    plain_utils += (t ? "/" : "") + pct(u, 1);
  }
  Outcome o;
  o.pass = rows > 0 && worst <= 0.2 && plain_max > 1.4 && tc.lambda_updates == 10 && tc.lambda_lr == 0.1;
  o.detail = "DDQN+lambda worst deviation " + pct(worst, 1) + " over " + std::to_string(rows) +
             " late evaluations (<= 20%); plain DDQN utilization " + plain_utils + " (max > 140%)";
  return o;
}

// ---------------------------------------------------------------------------
// 6. Method ordering across seeds.

Outcome ordering(Study& study) {
  int rem_ge_ddqnl = 0, ddqnl_ge_ddqn = 0, learned_ge_dcaf = 0, dcaf_ge_static = 0;
  for (int i = 0; i < study.seeds(); ++i) {
    const SeedStudy& s = study.seed(i);
    const double rem = s.rem.correction.final_eval.total_return;
    const double dl = s.ddqn_l.correction.final_eval.total_return;
    const double d = s.ddqn.correction.final_eval.total_return;
    rem_ge_ddqnl += rem >= dl;
    ddqnl_ge_ddqn += dl >= d;
    learned_ge_dcaf += std::min({rem, dl, d}) >= s.dcaf.total_return;
    dcaf_ge_static += s.dcaf.total_return >= s.stat.total_return;
  }
  const int need = (4 * study.seeds() + 4) / 5;
  Outcome o;
  o.pass = rem_ge_ddqnl >= need && ddqnl_ge_ddqn >= need && learned_ge_dcaf >= need && dcaf_ge_static >= need;
  const std::string of = "/" + std::to_string(study.seeds());
  o.detail = "REM+l >= DDQN+l " + std::to_string(rem_ge_ddqnl) + of + ", DDQN+l >= DDQN " +
             std::to_string(ddqnl_ge_ddqn) + of + ", learned >= DCAF " + std::to_string(learned_ge_dcaf) + of +
             ", DCAF >= Static " + std::to_string(dcaf_ge_static) + of + " (need " + std::to_string(need) + ")";
  return o;
}

// ---------------------------------------------------------------------------
// 7. Analytic gradients against central differences.

PhaseBatch random_batch(int phase, int rows, const QNetworkConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> a(0, cfg.action_sizes[phase] - 1);
  PhaseBatch b;
  b.phase = phase;
  b.states.resize(rows, cfg.input_dim);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cfg.input_dim; ++j) b.states(i, j) = n(rng);
    b.actions.push_back(a(rng));
    b.targets.push_back(n(rng));
  }
  return b;
}

Outcome gradient_oracle() {
  long coords = 0, failures = 0;
  double worst = 0.0;
  const std::vector<std::pair<int, bool>> variants{{1, false}, {6, false}, {3, true}};
  std::uint64_t seed = 70;
  for (const auto& [heads, imitation] : variants) {
    QNetworkConfig cfg;
    cfg.input_dim = 9;
    cfg.hidden = {12, 7};
    cfg.action_sizes = {4, 26, 3};
    cfg.heads = heads;
    cfg.imitation = imitation;
    cfg.seed = ++seed;
    QNetwork net(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> jitter(0.0, 0.1);
    for (double& v : net.params().values()) v += jitter(rng);
    const RemMixture beta = RemMixture::random(heads, rng);
    std::vector<PhaseBatch> batches;
    for (int t = 0; t < 3; ++t) batches.push_back(random_batch(t, 12, cfg, rng));
    std::vector<double> grad(net.params().size());
    net.loss_and_gradient(batches, beta, grad);
    const double eps = 1e-6;
    for (const auto& block : net.params().blocks()) {
      std::uniform_int_distribution<size_t> pick(0, block.size() - 1);
      for (int k = 0; k < 10; ++k) {
        const size_t idx = block.offset + pick(rng);
        double& w = net.params().values()[idx];
        const double orig = w;
        w = orig + eps;
        const double up = net.loss(batches, beta).total();
        w = orig - eps;
        const double down = net.loss(batches, beta).total();
        w = orig;
        const double numeric = (up - down) / (2.0 * eps);
        const double scale = std::max({std::abs(numeric), std::abs(grad[idx]), 1e-6});
        const double rel = std::abs(numeric - grad[idx]) / scale;
        worst = std::max(worst, rel);
        failures += rel > 1e-4;
        ++coords;
      }
    }
  }
  Outcome o;
  o.pass = failures == 0;
  o.detail = std::to_string(coords) + " coordinates (10 per parameter block, 3 network variants), worst relative error " +
             fmt(worst * 1e6, 3) + "e-6, " + std::to_string(failures) + " above 1e-4";
  return o;
}

// ---------------------------------------------------------------------------
// 8. Ensemble mixture algebra.

Outcome rem_algebra() {
  std::mt19937_64 rng(808);
  std::normal_distribution<double> n(0.0, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int heads = 1 + static_cast<int>(rng() % 16), actions = 2 + static_cast<int>(rng() % 25);
    std::vector<double> per_head(static_cast<size_t>(heads) * actions);
    for (double& x : per_head) x = n(rng);
    const RemMixture beta = RemMixture::random(heads, rng);
    const auto mixed = rem_combine(per_head, actions, beta);
    for (int a = 0; a < actions; ++a) {
      double manual = 0.0;
      for (int h = 0; h < heads; ++h) manual += beta.beta()[h] * per_head[static_cast<size_t>(h) * actions + a];
      worst = std::max(worst, std::abs(mixed[a] - manual));
    }
  }
  // Network outputs against a recomputation from the raw head activations.
  QNetworkConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden = {10};
  cfg.action_sizes = {4, 26, 3};
  cfg.heads = 5;
  QNetwork net(cfg);
  Matrix states(7, 6);
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 6; ++j) states(i, j) = n(rng);
  }
  for (int t = 0; t < 3; ++t) {
    const RemMixture beta = RemMixture::random(5, rng);
    ForwardCache cache;
    net.forward(states, t, cache);
    const Matrix q = net.q_values(states, t, beta);
    const int na = cfg.action_sizes[t];
    for (int i = 0; i < 7; ++i) {
      for (int a = 0; a < na; ++a) {
        double manual = 0.0;
        for (int h = 0; h < 5; ++h) manual += beta.beta()[h] * cache.heads(i, h * na + a);
        worst = std::max(worst, std::abs(q(i, a) - manual));
      }
    }
  }
  // The simplex is enforced on construction and by the random draw.
  int rejected = 0, simplex_ok = 0;
  const std::vector<std::vector<double>> bad{{0.5, 0.6}, {-0.1, 1.1}, {}, {0.3, 0.3, 0.3}, {NAN, 1.0}};
  for (const auto& b : bad) {
    try {
      RemMixture m(b);
    } catch (const std::exception&) {
      ++rejected;
    }
  }
  for (int k = 0; k < 1000; ++k) {
    const RemMixture m = RemMixture::random(1 + static_cast<int>(k % 64), rng);
    const double sum = std::accumulate(m.beta().begin(), m.beta().end(), 0.0);
    const bool nonneg = std::all_of(m.beta().begin(), m.beta().end(), [](double b) { return b >= 0.0; });
    simplex_ok += nonneg && std::abs(sum - 1.0) <= RemMixture::kSimplexTolerance;
  }
  Outcome o;
  o.pass = worst <= 1e-10 && rejected == static_cast<int>(bad.size()) && simplex_ok == 1000;
  o.detail = "max |Q_rem - sum beta_h Q^h| " + fmt(worst * 1e15, 2) + "e-15, " + std::to_string(rejected) + "/" +
             std::to_string(bad.size()) + " invalid mixtures rejected, " + std::to_string(simplex_ok) +
             "/1000 random draws on the simplex";
  return o;
}

// ---------------------------------------------------------------------------
// 9. Cross-entropy search.

Outcome cem_oracle(Study& study) {
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(900 + seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> target(20);
    for (double& x : target) x = u(rng);
    CemConfig cfg;
    cfg.iterations = 80;
    cfg.samples = 200;
    cfg.retain = 40;
    cfg.init_sigma = 1.0;
    cfg.seed = seed;
    const auto res = cem_search(cfg, 20, [&](std::span<const double> theta) {
      double s = 0.0;
      for (int d = 0; d < 20; ++d) s -= (theta[d] - target[d]) * (theta[d] - target[d]);
      return CemScore{s, s, true};
    });
    double err = 0.0;
    for (int d = 0; d < 20; ++d) err = std::max(err, std::abs(res.mu[d] - target[d]));
    hits += err < 1e-2;
  }
  int feasible = 0;
  for (int i = 0; i < study.seeds(); ++i) {
    Experiment& e = *study.seed(i).exp;
    const CemPolicyResult& c = e.cem();
    const size_t n = std::min(e.train_set().size(), static_cast<size_t>(e.config().cem_requests));
    StaticPolicy rule(e.config().static_rule);
    const EvalResult anchor = evaluate_policy(e.sim(), rule, std::span(e.train_set()).first(n));
    bool ok = c.search.found_feasible;
    for (int t = 0; t < 3; ++t) ok = ok && c.eval.phase_cost[t] <= anchor.phase_cost[t] + 1e-9;
    feasible += ok;
  }
  Outcome o;
  o.pass = hits >= 19 && feasible == study.seeds();
  o.detail = "quadratic: mu within 1e-2 in " + std::to_string(hits) + "/20 runs (>= 19); env: feasible in " +
             std::to_string(feasible) + "/" + std::to_string(study.seeds()) + " runs";
  return o;
}

// ---------------------------------------------------------------------------
// 10. Load control under a traffic spike.

Outcome spike_rejection(Study& study) {
  SeedStudy& s = study.seed(0);
  Experiment& e = *s.exp;
  StreamConfig sc = e.config().serving;
  if (sc.spike.first_visit < 0) sc.spike = SpikeScenario{2, 3, 2.0};
  sc.spike.factor = 2.0;
  sc.requests_per_slice = e.static_eval().slice_requests;
  sc.refresh.bisection = e.config().correction;
  const QNetwork net(s.rem.training.params);
  const StreamReport rep = run_stream(net, e.encoder(), e.sim(), s.rem.correction.table, e.budgets(), sc);

  // Recovery window: one slice of ticks after the spike starts.
  const long per = sc.ticks_per_slice;
  const long spike_lo = sc.spike.first_visit * per;
  const long spike_hi = spike_lo + sc.spike.visits * per;
  const long window_end = spike_lo + per;
  double load_sum = 0.0, meas_sum = 0.0, peak = 0.0;
  int load_n = 0, meas_n = 0;
  for (const auto& tick : rep.ticks) {
    if (tick.tick >= spike_lo && tick.tick < spike_hi) peak = std::max(peak, tick.load);
    if (tick.tick >= window_end && tick.tick < spike_hi) {
      load_sum += tick.load;
      ++load_n;
      if (tick.tick >= (window_end + spike_hi) / 2) {
        meas_sum += tick.measurement;
        ++meas_n;
      }
    }
  }
  const double after = load_n ? load_sum / load_n : INFINITY;
  const double tracking = meas_n ? std::abs(meas_sum / meas_n - sc.pid.setpoint) / sc.pid.setpoint : INFINITY;

  // Without control the same spike keeps the load near the spike factor.
  StreamConfig open = sc;
  open.control_enabled = false;
  const StreamReport open_rep = run_stream(net, e.encoder(), e.sim(), s.rem.correction.table, e.budgets(), open);
  double open_sum = 0.0;
  int open_n = 0;
  for (const auto& tick : open_rep.ticks) {
    if (tick.tick >= window_end && tick.tick < spike_hi) {
      open_sum += tick.load;
      ++open_n;
    }
  }
  Outcome o;
  o.pass = after < 1.05 && tracking < 0.01;
  o.detail = "2x spike: peak load " + pct(peak, 1) + ", mean load after a " + std::to_string(per) +
             "-tick window " + pct(after, 1) + " (< 105%; " + pct(open_n ? open_sum / open_n : 0.0, 1) +
             " uncontrolled), steady-state tracking error " + pct(tracking, 2) + " (< 1%)";
  return o;
}

// ---------------------------------------------------------------------------
// 11. Encodings and score anchors.

Outcome encodings() {
  int bad = 0;
  bad += strategy_number(std::vector<int>{0, 1, 1}, 3) != 3;
  bad += strategy_indicator(3, 3) != std::vector<int>{0, 1, 1};
  ActionSpaceSpec spec;
  spec.queue_buckets = 26;
  spec.queue_bucket_width = 10;
  for (int b = 0; b < 26; ++b) bad += queue_action_length(spec, b) != 10 * (b + 1);
  bad += normalized_score(42.0, 42.0, 142.0) != 0.0;
  bad += normalized_score(142.0, 42.0, 142.0) != 100.0;
  bad += normalized_score(92.0, 42.0, 142.0) != 50.0;
  Outcome o;
  o.pass = bad == 0;
  o.detail = "strategy (0,1,1) -> 3, queue buckets 10..260, score anchors 0/100: " + std::to_string(bad) + " mismatches";
  return o;
}

// ---------------------------------------------------------------------------
// 12. Bit-reproducibility of every stage.

struct ChainOutputs {
  std::vector<SyntheticRequest> train_set, eval_set;
  std::vector<TransitionRecord> records;
  std::vector<double> cem_mu;
  std::vector<std::vector<double>> params;
  std::vector<std::vector<double>> telemetry;
  std::vector<std::map<int, std::vector<double>>> tables;
  std::vector<EvalResult> evals;
  std::vector<double> dcaf;
  std::vector<double> serving;
};

ChainOutputs run_chain(const ExperimentConfig& cfg, int workers) {
  kernels::set_worker_count(workers);
  ChainOutputs out;
  Experiment e(cfg);
  out.train_set = e.train_set();
  out.eval_set = e.eval_set();
  out.records = e.collect();
  out.cem_mu = e.cem().search.mu;
  out.evals.push_back(e.static_eval());
  for (Algo algo : {Algo::kDdqn, Algo::kBcq, Algo::kRem}) {
    TrainConfig tc = cfg.train;
    tc.algo = algo;
    const MethodRun run = e.run_method(tc, out.records);
    out.params.emplace_back(run.training.params.values().begin(), run.training.params.values().end());
    for (const auto& row : run.training.telemetry) {
      out.telemetry.push_back({static_cast<double>(row.step), static_cast<double>(row.phase), row.utilization, row.ret,
                               row.lambda, row.loss});
    }
    std::map<int, std::vector<double>> table;
    for (const auto& [slice, l] : run.correction.table.entries()) table[slice].assign(l.values().begin(), l.values().end());
    out.tables.push_back(std::move(table));
    out.evals.push_back(run.uncorrected);
    out.evals.push_back(run.correction.final_eval);
    if (algo == Algo::kRem) {
      StreamConfig sc = cfg.serving;
      sc.requests_per_slice = e.static_eval().slice_requests;
      const QNetwork net(run.training.params);
      const StreamReport rep = run_stream(net, e.encoder(), e.sim(), run.correction.table, e.budgets(), sc);
      for (const auto& t : rep.ticks) out.serving.insert(out.serving.end(), {t.load, t.measurement, t.output, t.clamp_level});
      out.serving.push_back(rep.total_return);
    }
  }
  for (const auto& d : e.dcaf()) out.dcaf.insert(out.dcaf.end(), {d.lambda, d.queue_cost, d.value});
  return out;
}

std::vector<std::string> differences(const ChainOutputs& a, const ChainOutputs& b) {
  std::vector<std::string> diff;
  if (a.train_set != b.train_set || a.eval_set != b.eval_set) diff.push_back("gen-data");
  if (a.records != b.records) diff.push_back("collect");
  if (a.cem_mu != b.cem_mu) diff.push_back("cem");
  if (a.params != b.params || a.telemetry != b.telemetry) diff.push_back("train");
  if (a.tables != b.tables) diff.push_back("correct");
  if (a.evals != b.evals) diff.push_back("eval");
  if (a.dcaf != b.dcaf) diff.push_back("dcaf");
  if (a.serving != b.serving) diff.push_back("serve");
  return diff;
}

Outcome determinism(const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  cfg.env.num_requests = 1500;
  cfg.env.num_slices = 4;
  cfg.eval_requests = 2000;
  cfg.cem_requests = 300;
  cfg.cem.iterations = 3;
  cfg.cem.samples = 8;
  cfg.cem.retain = 2;
  cfg.train.iterations = 60;
  cfg.train.batch_size = 256;
  cfg.train.eval_interval = 30;
  cfg.train.rem_heads = 4;
  cfg.correction.tolerance = 0.02;
  cfg.serving.slices = {0, 1, 2, 3};
  cfg.serving.ticks_per_slice = 5;
  cfg.serving.spike = SpikeScenario{1, 2, 2.0};
  cfg.apply_seed(12);
  const int restore = kernels::worker_count();
  const ChainOutputs first = run_chain(cfg, 1);
  const ChainOutputs again = run_chain(cfg, 1);
  const ChainOutputs threaded = run_chain(cfg, 4);
  kernels::set_worker_count(restore);
  auto d1 = differences(first, again);
  auto d2 = differences(first, threaded);
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s.empty() ? std::string("none") : s;
  };
  Outcome o;
  o.pass = d1.empty() && d2.empty();
  o.detail = "gen-data, collect, cem, train (ddqn/bcq/rem), correct, eval, dcaf, serve; differences on rerun: " +
             join(d1) + ", with 4 workers: " + join(d2);
  return o;
}

}  // namespace
}  // namespace mpca

int main(int argc, char** argv) {
  using namespace mpca;
  CLI::App app{"Acceptance criteria runner"};
  std::string config_path = std::string(MPCA_SOURCE_DIR) + "/configs/acceptance.json";
  int seeds = 5;
  std::vector<int> only;
  app.add_option("--config", config_path, "Experiment config for the trained-model criteria")->capture_default_str();
  app.add_option("--seeds", seeds, "Seeds in the ordering study")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--only", only, "Run only these criteria (1-12)")->delimiter(',')->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  std::unique_ptr<Study> study;
  try {
    study = std::make_unique<Study>(load_config(config_path), seeds);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"duality-gap oracle", [] { return duality_gap(); }},
      {"multiplier step conclusions", [] { return lemma_suite(); }},
      {"cost/value monotone in lambda", [&] { return monotonicity(*study); }},
      {"correction band", [&] { return correction_band(*study); }},
      {"training-time constraint tracking", [&] { return training_tracking(*study); }},
      {"method ordering over seeds", [&] { return ordering(*study); }},
      {"gradient oracle", [] { return gradient_oracle(); }},
      {"REM algebra", [] { return rem_algebra(); }},
      {"CEM oracle", [&] { return cem_oracle(*study); }},
      {"PID spike rejection", [&] { return spike_rejection(*study); }},
      {"encoding exactness", [] { return encodings(); }},
      {"determinism", [&] { return determinism(study->base()); }},
  };

  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << id << "  " << criteria[i].first
              << ": " << o.detail << " [" << fmt(seconds_since(start), 1) << " s]" << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << "\n";
  return failed ? 1 : 0;
}
