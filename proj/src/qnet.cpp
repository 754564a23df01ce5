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

#include "mpca/qnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mpca {

void QNetworkConfig::validate() const {
  if (input_dim < 1) throw ConfigError("qnet: input_dim must be >= 1");
  if (hidden.empty()) throw ConfigError("qnet: need at least one hidden layer");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("qnet: hidden sizes must be >= 1");
  }
  if (action_sizes.empty()) throw ConfigError("qnet: need at least one phase");
  for (int n : action_sizes) {
    if (n < 1) throw ConfigError("qnet: action sizes must be >= 1");
  }
  if (heads < 1) throw ConfigError("qnet: heads must be >= 1");
}

QNetworkParams::QNetworkParams(QNetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    blocks_.push_back({std::move(name), rows, cols, offset});
    offset += static_cast<size_t>(rows) * cols;
  };
  int fan_in = cfg_.input_dim;
  for (size_t l = 0; l < cfg_.hidden.size(); ++l) {
    add("trunk." + std::to_string(l) + ".weight", fan_in, cfg_.hidden[l]);
    add("trunk." + std::to_string(l) + ".bias", 1, cfg_.hidden[l]);
    fan_in = cfg_.hidden[l];
  }
  for (int t = 0; t < cfg_.num_phases(); ++t) {
    add("head." + std::to_string(t) + ".weight", fan_in, cfg_.heads * cfg_.action_sizes[t]);
    add("head." + std::to_string(t) + ".bias", 1, cfg_.heads * cfg_.action_sizes[t]);
  }
  if (cfg_.imitation) {
    for (int t = 0; t < cfg_.num_phases(); ++t) {
      add("imitation." + std::to_string(t) + ".weight", fan_in, cfg_.action_sizes[t]);
      add("imitation." + std::to_string(t) + ".bias", 1, cfg_.action_sizes[t]);
    }
  }
  values_.assign(offset, 0.0);
}

size_t QNetworkParams::head_weight(int phase) const {
  return 2 * cfg_.hidden.size() + 2 * static_cast<size_t>(phase);
}

size_t QNetworkParams::imitation_weight(int phase) const {
  if (!cfg_.imitation) throw std::logic_error("network has no imitation heads");
  return 2 * cfg_.hidden.size() + 2 * static_cast<size_t>(cfg_.num_phases()) + 2 * static_cast<size_t>(phase);
}

void QNetworkParams::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    auto values = block(i);
    if (blocks_[i].rows == 1 && blocks_[i].name.ends_with(".bias")) {
      std::fill(values.begin(), values.end(), 0.0);
      continue;
    }
    double limit = 1.0 / std::sqrt(static_cast<double>(blocks_[i].rows));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : values) v = dist(rng);
  }
}

bool QNetworkParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

RemMixture::RemMixture(std::vector<double> beta) : beta_(std::move(beta)) {
  if (beta_.empty()) throw std::invalid_argument("REM mixture needs at least one head");
  double sum = 0.0;
  for (double b : beta_) {
    if (!(b >= 0.0)) throw std::invalid_argument("REM mixture weights must be non-negative");
    sum += b;
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    throw std::invalid_argument("REM mixture weights must sum to one");
  }
}

RemMixture RemMixture::uniform(int heads) {
  return RemMixture(std::vector<double>(heads, 1.0 / heads));
}

RemMixture RemMixture::one_hot(int heads, int head) {
  std::vector<double> b(heads, 0.0);
  b.at(head) = 1.0;
  return RemMixture(std::move(b));
}

RemMixture RemMixture::random(int heads, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> b(heads);
  double sum = 0.0;
  for (double& x : b) {
    x = unit(rng) + 1e-12;
    sum += x;
  }
  for (double& x : b) x /= sum;
  // Push the rounding residue onto the largest entry so the sum is exact.
  double residue = 1.0 - std::accumulate(b.begin(), b.end(), 0.0);
  *std::max_element(b.begin(), b.end()) += residue;
  return RemMixture(std::move(b));
}

std::vector<double> rem_combine(std::span<const double> per_head, int num_actions, const RemMixture& beta) {
  if (per_head.size() != static_cast<size_t>(beta.heads()) * num_actions) {
    throw std::invalid_argument("rem_combine: per-head size mismatch");
  }
  std::vector<double> out(num_actions, 0.0);
  for (int h = 0; h < beta.heads(); ++h) {
    const double b = beta.beta()[h];
    for (int a = 0; a < num_actions; ++a) out[a] += b * per_head[static_cast<size_t>(h) * num_actions + a];
  }
  return out;
}

std::vector<double> constraint_layer(std::span<const double> q, std::span<const double> costs, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("constraint_layer: lambda must be non-negative");
  if (q.size() != costs.size()) throw std::invalid_argument("constraint_layer: cost size mismatch");
  std::vector<double> out(q.size());
  for (size_t a = 0; a < q.size(); ++a) out[a] = q[a] - lambda * costs[a];
  return out;
}

template <bool Parallel>
void QNetwork::forward_impl(const Matrix& states, int phase, ForwardCache& cache) const {
  const auto& cfg = config();
  if (phase < 0 || phase >= cfg.num_phases()) throw std::invalid_argument("forward: phase out of range");
  if (states.cols != cfg.input_dim) throw std::invalid_argument("forward: input width mismatch");
  for (double x : states.data) {
    if (!std::isfinite(x)) throw std::invalid_argument("forward: non-finite input");
  }
  auto dense = [](const Matrix& in, std::span<const double> w, std::span<const double> b, Matrix& out) {
    if constexpr (Parallel) {
      kernels::dense_forward(in, w, b, out);
    } else {
      kernels::dense_forward_serial(in, w, b, out);
    }
  };
  cache.phase = phase;
  cache.input = states;
  cache.hidden.resize(cfg.hidden.size());
  const Matrix* x = &cache.input;
  for (size_t l = 0; l < cfg.hidden.size(); ++l) {
    dense(*x, params_.block(params_.trunk_weight(l)), params_.block(params_.trunk_bias(l)), cache.hidden[l]);
    kernels::relu_inplace(cache.hidden[l]);
    x = &cache.hidden[l];
  }
  dense(*x, params_.block(params_.head_weight(phase)), params_.block(params_.head_bias(phase)), cache.heads);
  if (cfg.imitation) {
    dense(*x, params_.block(params_.imitation_weight(phase)), params_.block(params_.imitation_bias(phase)),
          cache.imitation_logits);
  } else {
    cache.imitation_logits = Matrix();
  }
}

void QNetwork::forward(const Matrix& states, int phase, ForwardCache& cache) const {
  forward_impl<true>(states, phase, cache);
}

void QNetwork::forward_serial(const Matrix& states, int phase, ForwardCache& cache) const {
  forward_impl<false>(states, phase, cache);
}

namespace {

void softmax_row(std::span<const double> logits, std::span<double> out) {
  double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (size_t a = 0; a < logits.size(); ++a) {
    out[a] = std::exp(logits[a] - m);
    sum += out[a];
  }
  for (double& p : out) p /= sum;
}

}  // namespace

Matrix mix_heads(const Matrix& heads, int num_actions, const RemMixture& beta) {
  Matrix out(heads.rows, num_actions);
  for (int i = 0; i < heads.rows; ++i) {
    auto mixed = rem_combine(heads.row(i), num_actions, beta);
    std::copy(mixed.begin(), mixed.end(), out.row(i).begin());
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows, logits.cols);
  for (int i = 0; i < logits.rows; ++i) softmax_row(logits.row(i), probs.row(i));
  return probs;
}

Matrix QNetwork::q_values(const Matrix& states, int phase, const RemMixture& beta) const {
  if (beta.heads() != config().heads) throw std::invalid_argument("q_values: mixture/head count mismatch");
  ForwardCache cache;
  forward(states, phase, cache);
  return mix_heads(cache.heads, config().action_sizes[phase], beta);
}

std::vector<double> QNetwork::q_values(std::span<const double> state, int phase, const RemMixture& beta) const {
  Matrix m(1, static_cast<int>(state.size()));
  std::copy(state.begin(), state.end(), m.data.begin());
  Matrix q = q_values(m, phase, beta);
  return q.data;
}

Matrix QNetwork::imitation_probs(const Matrix& states, int phase) const {
  if (!config().imitation) throw std::logic_error("network has no imitation heads");
  ForwardCache cache;
  forward(states, phase, cache);
  return softmax_rows(cache.imitation_logits);
}

LossBreakdown QNetwork::loss_and_gradient(std::span<const PhaseBatch> batches, const RemMixture& beta,
                                          std::span<double> grad) const {
  const auto& cfg = config();
  if (grad.size() != params_.size()) throw std::invalid_argument("loss_and_gradient: gradient size mismatch");
  if (beta.heads() != cfg.heads) throw std::invalid_argument("loss_and_gradient: mixture/head count mismatch");
  std::fill(grad.begin(), grad.end(), 0.0);
  size_t total_rows = 0;
  for (const auto& b : batches) total_rows += b.actions.size();
  LossBreakdown loss;
  if (total_rows == 0) return loss;
  const double inv_n = 1.0 / static_cast<double>(total_rows);
  auto grad_block = [&](size_t i) {
    const auto& blk = params_.blocks()[i];
    return grad.subspan(blk.offset, blk.size());
  };

  ForwardCache cache;
  Matrix grad_hidden, grad_extra, grad_prev;
  for (const auto& batch : batches) {
    const int rows = batch.states.rows;
    if (rows == 0) continue;
    if (static_cast<int>(batch.actions.size()) != rows || static_cast<int>(batch.targets.size()) != rows) {
      throw std::invalid_argument("loss_and_gradient: batch size mismatch");
    }
    const int t = batch.phase;
    const int n_actions = cfg.action_sizes.at(t);
    forward(batch.states, t, cache);

    Matrix g_heads(rows, cfg.heads * n_actions);
    for (int i = 0; i < rows; ++i) {
      const int a = batch.actions[i];
      if (a < 0 || a >= n_actions) throw std::invalid_argument("loss_and_gradient: action out of range");
      double q = 0.0;
      for (int h = 0; h < cfg.heads; ++h) q += beta.beta()[h] * cache.heads(i, h * n_actions + a);
      const double err = q - batch.targets[i];
      loss.td += err * err;
      for (int h = 0; h < cfg.heads; ++h) g_heads(i, h * n_actions + a) = 2.0 * err * beta.beta()[h] * inv_n;
    }
    const Matrix& last = cache.hidden.back();
    kernels::dense_backward(last, params_.block(params_.head_weight(t)), g_heads,
                            grad_block(params_.head_weight(t)), grad_block(params_.head_bias(t)), &grad_hidden);

    if (cfg.imitation) {
      Matrix g_logits(rows, n_actions);
      std::vector<double> p(n_actions);
      for (int i = 0; i < rows; ++i) {
        softmax_row(cache.imitation_logits.row(i), p);
        const int a = batch.actions[i];
        loss.imitation -= std::log(std::max(p[a], 1e-300));
        for (int k = 0; k < n_actions; ++k) g_logits(i, k) = (p[k] - (k == a ? 1.0 : 0.0)) * inv_n;
      }
      kernels::dense_backward(last, params_.block(params_.imitation_weight(t)), g_logits,
                              grad_block(params_.imitation_weight(t)), grad_block(params_.imitation_bias(t)),
                              &grad_extra);
      for (size_t k = 0; k < grad_hidden.data.size(); ++k) grad_hidden.data[k] += grad_extra.data[k];
    }

    for (int l = static_cast<int>(cfg.hidden.size()) - 1; l >= 0; --l) {
      kernels::relu_backward(cache.hidden[l], grad_hidden);
      const Matrix& in = l == 0 ? cache.input : cache.hidden[l - 1];
      kernels::dense_backward(in, params_.block(params_.trunk_weight(l)), grad_hidden,
                              grad_block(params_.trunk_weight(l)), grad_block(params_.trunk_bias(l)),
                              l > 0 ? &grad_prev : nullptr);
      if (l > 0) std::swap(grad_hidden, grad_prev);
    }
  }
  loss.td *= inv_n;
  loss.imitation *= inv_n;
  if (!std::isfinite(loss.total())) throw std::runtime_error("non-finite loss");
  return loss;
}

LossBreakdown QNetwork::loss(std::span<const PhaseBatch> batches, const RemMixture& beta) const {
  std::vector<double> scratch(params_.size());
  return loss_and_gradient(batches, beta, scratch);
}

std::vector<unsigned char> bcq_mask(std::span<const double> probs, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("bcq_mask: tau must be in [0, 1]");
  double pmax = *std::max_element(probs.begin(), probs.end());
  std::vector<unsigned char> mask(probs.size());
  for (size_t a = 0; a < probs.size(); ++a) mask[a] = probs[a] >= tau * pmax ? 1 : 0;
  // The most likely action always satisfies p >= tau * p_max, so the mask is never empty.
  return mask;
}

int act(std::span<const double> q, std::span<const double> costs, double lambda,
        std::span<const unsigned char> mask) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("act: lambda must be non-negative");
  return kernels::calibrated_argmax(q, costs, lambda, mask);
}

int act(const QNetwork& net, const LambdaVector& lambda, std::span<const double> encoded_state, int phase,
        std::span<const double> costs, const RemMixture& beta) {
  auto q = net.q_values(encoded_state, phase, beta);
  return act(q, costs, lambda[phase]);
}

AdamOptimizer::AdamOptimizer(size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

namespace {

constexpr const char* kCheckpointFormat = "mpca-qnetwork";
constexpr int kCheckpointVersion = 1;

}  // namespace

std::string checkpoint_to_string(const QNetworkParams& params) {
  const auto& cfg = params.config();
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& b : params.blocks()) {
    manifest.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}, {"offset", b.offset}});
  }
  nlohmann::json doc = {
      {"format", kCheckpointFormat},
      {"version", kCheckpointVersion},
      {"config",
       {{"input_dim", cfg.input_dim},
        {"hidden", cfg.hidden},
        {"action_sizes", cfg.action_sizes},
        {"heads", cfg.heads},
        {"imitation", cfg.imitation},
        {"seed", cfg.seed}}},
      {"manifest", manifest},
      {"values", std::vector<double>(params.values().begin(), params.values().end())},
  };
  return doc.dump();
}

QNetworkParams checkpoint_from_string(const std::string& text) {
  auto doc = nlohmann::json::parse(text);
  if (doc.at("format").get<std::string>() != kCheckpointFormat) throw std::runtime_error("not a Q-network checkpoint");
  if (doc.at("version").get<int>() != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto& c = doc.at("config");
  QNetworkConfig cfg;
  c.at("input_dim").get_to(cfg.input_dim);
  c.at("hidden").get_to(cfg.hidden);
  c.at("action_sizes").get_to(cfg.action_sizes);
  c.at("heads").get_to(cfg.heads);
  c.at("imitation").get_to(cfg.imitation);
  c.at("seed").get_to(cfg.seed);
  QNetworkParams params(cfg);
  const auto& manifest = doc.at("manifest");
  if (manifest.size() != params.blocks().size()) throw std::runtime_error("checkpoint manifest mismatch");
  for (size_t i = 0; i < manifest.size(); ++i) {
    const auto& b = params.blocks()[i];
    if (manifest[i].at("name").get<std::string>() != b.name || manifest[i].at("rows").get<int>() != b.rows ||
        manifest[i].at("cols").get<int>() != b.cols || manifest[i].at("offset").get<size_t>() != b.offset) {
      throw std::runtime_error("checkpoint manifest mismatch at block " + b.name);
    }
  }
  auto values = doc.at("values").get<std::vector<double>>();
  if (values.size() != params.size()) throw std::runtime_error("checkpoint value count mismatch");
  std::copy(values.begin(), values.end(), params.values().begin());
  return params;
}

void save_checkpoint(const std::string& path, const QNetworkParams& params, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  if (config_hash.empty()) {
    out << checkpoint_to_string(params) << '\n';
    return;
  }
  auto doc = nlohmann::json::parse(checkpoint_to_string(params));
  doc["config_hash"] = config_hash;
  out << doc.dump() << '\n';
}

QNetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace mpca
