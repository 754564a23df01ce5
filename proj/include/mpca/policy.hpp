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

#pragma once

// Decision rules applied to batches of same-phase states, and the batched
// Q-network policy used by evaluation, correction and serving.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "mpca/core.hpp"
#include "mpca/qnet.hpp"
#include "mpca/simenv.hpp"

namespace mpca {

class Policy {
 public:
  virtual ~Policy() = default;
  /// Writes one action per state. Every state is at `phase`; implementations
  /// must be deterministic and free of hidden mutable state.
  virtual void decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const = 0;
};

/// Uniform random actions derived from (seed, request id, phase), so results
/// do not depend on batching or evaluation order.
class RandomPolicy final : public Policy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : seed_(seed) {}
  void decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const override;

 private:
  std::uint64_t seed_;
};

/// Stacks encoded states row by row.
Matrix encode_states(const StateEncoder& encoder, std::span<const PhaseState> states);

/// Mixed q-values and, for BCQ networks, the admissibility mask of a batch.
struct PhaseScores {
  Matrix q;                                        // rows x N_t
  std::vector<std::vector<unsigned char>> masks;   // empty without imitation heads
};

struct QPolicyOptions {
  double bcq_tau = 0.3;  // used only when the network has imitation heads
};

/// argmax_a Q(s, a) - lambda_t(slice) * Cost(s, a) with the uniform REM mixture.
class QPolicy final : public Policy {
 public:
  QPolicy(const QNetwork& net, const StateEncoder& encoder, LambdaTable lambda, QPolicyOptions opts = {});

  void decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const override;
  PhaseScores scores(int phase, std::span<const PhaseState> states) const;

  const LambdaTable& lambda() const { return lambda_; }
  void set_lambda(LambdaTable lambda) { lambda_ = std::move(lambda); }

 private:
  const QNetwork& net_;
  const StateEncoder& encoder_;
  LambdaTable lambda_;
  QPolicyOptions opts_;
  RemMixture beta_;
};

/// Greedy calibrated action of one scored row.
int greedy_action(const PhaseScores& scores, int row, std::span<const double> costs, double lambda);

}  // namespace mpca
