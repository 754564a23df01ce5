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

// Multi-phase Q-network: a shared ReLU trunk, one output head group per
// phase (H ensemble heads each), optional behaviour-cloning heads for
// discrete BCQ, and the Constraint Layer used for action selection.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mpca/core.hpp"
#include "mpca/kernels.hpp"

namespace mpca {

struct QNetworkConfig {
  int input_dim = 0;
  std::vector<int> hidden{128, 64};
  std::vector<int> action_sizes;  // per phase
  int heads = 1;                  // H; > 1 for REM
  bool imitation = false;         // behaviour-cloning heads (discrete BCQ)
  std::uint64_t seed = 1;

  int num_phases() const { return static_cast<int>(action_sizes.size()); }
  void validate() const;
  bool operator==(const QNetworkConfig&) const = default;
};

struct ParamBlock {
  std::string name;
  int rows = 0;  // fan-in for weights, 1 for biases
  int cols = 0;
  size_t offset = 0;
  size_t size() const { return static_cast<size_t>(rows) * cols; }
};

/// All weights in one flat vector, addressed through named blocks.
class QNetworkParams {
 public:
  QNetworkParams() = default;
  explicit QNetworkParams(QNetworkConfig cfg);

  const QNetworkConfig& config() const { return cfg_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  size_t size() const { return values_.size(); }

  std::span<double> block(size_t i) { return std::span(values_).subspan(blocks_[i].offset, blocks_[i].size()); }
  std::span<const double> block(size_t i) const {
    return std::span(values_).subspan(blocks_[i].offset, blocks_[i].size());
  }

  // Block indices.
  size_t trunk_weight(int layer) const { return 2 * static_cast<size_t>(layer); }
  size_t trunk_bias(int layer) const { return 2 * static_cast<size_t>(layer) + 1; }
  size_t head_weight(int phase) const;
  size_t head_bias(int phase) const { return head_weight(phase) + 1; }
  size_t imitation_weight(int phase) const;
  size_t imitation_bias(int phase) const { return imitation_weight(phase) + 1; }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.
  void initialize(std::uint64_t seed);
  bool all_finite() const;

  bool operator==(const QNetworkParams& o) const { return cfg_ == o.cfg_ && values_ == o.values_; }

 private:
  QNetworkConfig cfg_;
  std::vector<ParamBlock> blocks_;
  std::vector<double> values_;
};

/// Convex weights over the H ensemble heads.
class RemMixture {
 public:
  static constexpr double kSimplexTolerance = 1e-9;

  explicit RemMixture(std::vector<double> beta);
  static RemMixture uniform(int heads);
  static RemMixture one_hot(int heads, int head);
  /// beta_h = u_h / sum(u), u_h ~ U(0, 1).
  static RemMixture random(int heads, std::mt19937_64& rng);

  int heads() const { return static_cast<int>(beta_.size()); }
  std::span<const double> beta() const { return beta_; }

 private:
  std::vector<double> beta_;
};

/// Q^REM(a) = sum_h beta_h Q^h(a); `per_head` is head-major (H x N).
std::vector<double> rem_combine(std::span<const double> per_head, int num_actions, const RemMixture& beta);

/// Row-wise rem_combine over a batch of head outputs (rows x H*N).
Matrix mix_heads(const Matrix& heads, int num_actions, const RemMixture& beta);
Matrix softmax_rows(const Matrix& logits);

/// Q_lambda(a) = Q(a) - lambda * Cost(a).
std::vector<double> constraint_layer(std::span<const double> q, std::span<const double> costs, double lambda);

/// Activations of one forward pass over a batch of same-phase states.
struct ForwardCache {
  int phase = 0;
  Matrix input;
  std::vector<Matrix> hidden;  // post-ReLU trunk outputs
  Matrix heads;                // rows x (H * N_t)
  Matrix imitation_logits;     // rows x N_t, empty without imitation heads
};

/// Rows of one phase for the squared TD loss.
struct PhaseBatch {
  int phase = 0;
  Matrix states;
  std::vector<int> actions;
  std::vector<double> targets;
};

struct LossBreakdown {
  double td = 0.0;
  double imitation = 0.0;
  double total() const { return td + imitation; }
};

class QNetwork {
 public:
  QNetwork() = default;
  explicit QNetwork(QNetworkParams params) : params_(std::move(params)) {}
  explicit QNetwork(const QNetworkConfig& cfg) : params_(cfg) { params_.initialize(cfg.seed); }

  const QNetworkConfig& config() const { return params_.config(); }
  QNetworkParams& params() { return params_; }
  const QNetworkParams& params() const { return params_; }

  /// Batched forward pass; rows of `states` must all be at `phase`.
  void forward(const Matrix& states, int phase, ForwardCache& cache) const;
  void forward_serial(const Matrix& states, int phase, ForwardCache& cache) const;

  /// Mixed q-values (rows x N_t) for a batch.
  Matrix q_values(const Matrix& states, int phase, const RemMixture& beta) const;
  std::vector<double> q_values(std::span<const double> state, int phase, const RemMixture& beta) const;

  /// Behaviour-cloning probabilities (softmax of the imitation head).
  Matrix imitation_probs(const Matrix& states, int phase) const;

  /// Mean squared TD error on the mixed head plus mean cross-entropy of the
  /// imitation heads (when present), and its exact gradient. `grad` is
  /// overwritten and must have params().size() entries.
  LossBreakdown loss_and_gradient(std::span<const PhaseBatch> batches, const RemMixture& beta,
                                  std::span<double> grad) const;
  LossBreakdown loss(std::span<const PhaseBatch> batches, const RemMixture& beta) const;

 private:
  template <bool Parallel>
  void forward_impl(const Matrix& states, int phase, ForwardCache& cache) const;

  QNetworkParams params_;
};

/// Actions whose behaviour-cloned probability is at least tau * max.
std::vector<unsigned char> bcq_mask(std::span<const double> probs, double tau);

/// argmax over Constraint-Layer-calibrated q-values, ties to lower cost.
int act(std::span<const double> q, std::span<const double> costs, double lambda,
        std::span<const unsigned char> mask = {});
int act(const QNetwork& net, const LambdaVector& lambda, std::span<const double> encoded_state, int phase,
        std::span<const double> costs, const RemMixture& beta);

class AdamOptimizer {
 public:
  AdamOptimizer(size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grad);
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

/// Checkpoint: JSON document with a format tag, version, shape manifest and
/// the flat parameter vector (doubles written round-trip exact).
/// A non-empty config hash is stored alongside the parameters.
void save_checkpoint(const std::string& path, const QNetworkParams& params, const std::string& config_hash = "");
QNetworkParams load_checkpoint(const std::string& path);
std::string checkpoint_to_string(const QNetworkParams& params);
QNetworkParams checkpoint_from_string(const std::string& text);

}  // namespace mpca
