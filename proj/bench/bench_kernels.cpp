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

// Throughput of the OpenMP kernels against their serial twins.

#include <benchmark/benchmark.h>

#include <random>

#include "mpca/kernels.hpp"
#include "mpca/lambda_correct.hpp"
#include "mpca/policy.hpp"
#include "mpca/qnet.hpp"
#include "mpca/simenv.hpp"

namespace {

mpca::Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  mpca::Matrix m(rows, cols);
  for (double& x : m.data) x = u(rng);
  return m;
}

std::vector<double> random_vector(size_t n, std::uint64_t seed) {
  mpca::Matrix m = random_matrix(1, static_cast<int>(n), seed);
  return m.data;
}

template <bool Parallel>
void BM_DenseForward(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  const int in_dim = 128;
  const int out_dim = 128;
  const auto in = random_matrix(rows, in_dim, 1);
  const auto w = random_vector(static_cast<size_t>(in_dim) * out_dim, 2);
  const auto b = random_vector(out_dim, 3);
  mpca::Matrix out;
  for (auto _ : state) {
    if constexpr (Parallel) {
      mpca::kernels::dense_forward(in, w, b, out);
    } else {
      mpca::kernels::dense_forward_serial(in, w, b, out);
    }
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * rows);
}

template <bool Parallel>
void BM_DenseBackward(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  const int in_dim = 128;
  const int out_dim = 64;
  const auto in = random_matrix(rows, in_dim, 4);
  const auto grad_out = random_matrix(rows, out_dim, 5);
  const auto w = random_vector(static_cast<size_t>(in_dim) * out_dim, 6);
  std::vector<double> gw(w.size());
  std::vector<double> gb(out_dim);
  mpca::Matrix gx;
  for (auto _ : state) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    if constexpr (Parallel) {
      mpca::kernels::dense_backward(in, w, grad_out, gw, gb, &gx);
    } else {
      mpca::kernels::dense_backward_serial(in, w, grad_out, gw, gb, &gx);
    }
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * rows);
}

template <bool Parallel>
void BM_NetworkForward(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  mpca::EnvConfig env;
  mpca::StateEncoder enc(env);
  mpca::QNetworkConfig cfg;
  cfg.input_dim = enc.dim();
  cfg.action_sizes = env.actions.phase_sizes();
  cfg.heads = 8;
  mpca::QNetwork net(cfg);
  const auto states = random_matrix(rows, enc.dim(), 7);
  mpca::ForwardCache cache;
  for (auto _ : state) {
    if constexpr (Parallel) {
      net.forward(states, 1, cache);
    } else {
      net.forward_serial(states, 1, cache);
    }
    benchmark::DoNotOptimize(cache.heads.data.data());
  }
  state.SetItemsProcessed(state.iterations() * rows);
}

template <bool Parallel>
void BM_PolicyRollout(benchmark::State& state) {
  mpca::EnvConfig env;
  env.num_requests = static_cast<int>(state.range(0));
  const auto requests = mpca::generate_dataset(env);
  mpca::Simulator sim(env);
  mpca::RandomPolicy policy(3);
  for (auto _ : state) {
    auto r = Parallel ? mpca::evaluate_policy(sim, policy, requests) : mpca::evaluate_policy_serial(sim, policy, requests);
    benchmark::DoNotOptimize(r.total_return);
  }
  state.SetItemsProcessed(state.iterations() * env.num_requests);
}

}  // namespace

BENCHMARK(BM_DenseForward<true>)->Arg(256)->Arg(4096);
BENCHMARK(BM_DenseForward<false>)->Arg(256)->Arg(4096);
BENCHMARK(BM_DenseBackward<true>)->Arg(256)->Arg(4096);
BENCHMARK(BM_DenseBackward<false>)->Arg(256)->Arg(4096);
BENCHMARK(BM_NetworkForward<true>)->Arg(1024);
BENCHMARK(BM_NetworkForward<false>)->Arg(1024);
BENCHMARK(BM_PolicyRollout<true>)->Arg(2000);
BENCHMARK(BM_PolicyRollout<false>)->Arg(2000);

BENCHMARK_MAIN();
