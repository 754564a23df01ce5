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

#include "mpca/policy.hpp"

#include "mpca/rng.hpp"

namespace mpca {

void RandomPolicy::decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const {
  for (size_t i = 0; i < states.size(); ++i) {
    std::uint64_t h = hash_combine(hash_combine(seed_, states[i].request_id), static_cast<std::uint64_t>(phase));
    const auto n = static_cast<std::uint64_t>(states[i].action_costs.size());
    actions[i] = static_cast<int>(h % n);
  }
}

Matrix encode_states(const StateEncoder& encoder, std::span<const PhaseState> states) {
  Matrix m(static_cast<int>(states.size()), encoder.dim());
#pragma omp parallel for schedule(static) if (states.size() >= 256)
  for (int i = 0; i < m.rows; ++i) encoder.encode(states[i], m.row(i));
  return m;
}

QPolicy::QPolicy(const QNetwork& net, const StateEncoder& encoder, LambdaTable lambda, QPolicyOptions opts)
    : net_(net),
      encoder_(encoder),
      lambda_(std::move(lambda)),
      opts_(opts),
      beta_(RemMixture::uniform(net.config().heads)) {
  if (encoder.dim() != net.config().input_dim) throw ConfigError("encoder width does not match the network");
  if (lambda_.empty()) throw ConfigError("QPolicy needs a lambda table");
}

PhaseScores QPolicy::scores(int phase, std::span<const PhaseState> states) const {
  PhaseScores out;
  Matrix x = encode_states(encoder_, states);
  ForwardCache cache;
  net_.forward(x, phase, cache);
  out.q = mix_heads(cache.heads, net_.config().action_sizes[phase], beta_);
  if (net_.config().imitation) {
    Matrix probs = softmax_rows(cache.imitation_logits);
    out.masks.resize(probs.rows);
    for (int i = 0; i < probs.rows; ++i) out.masks[i] = bcq_mask(probs.row(i), opts_.bcq_tau);
  }
  return out;
}

int greedy_action(const PhaseScores& scores, int row, std::span<const double> costs, double lambda) {
  std::span<const unsigned char> mask;
  if (!scores.masks.empty()) mask = scores.masks[row];
  return act(scores.q.row(row), costs, lambda, mask);
}

void QPolicy::decide(int phase, std::span<const PhaseState> states, std::span<int> actions) const {
  if (states.empty()) return;
  PhaseScores s = scores(phase, states);
  for (size_t i = 0; i < states.size(); ++i) {
    double lambda = lambda_.lookup(states[i].slice)[phase];
    actions[i] = greedy_action(s, static_cast<int>(i), states[i].action_costs, lambda);
  }
}

}  // namespace mpca
