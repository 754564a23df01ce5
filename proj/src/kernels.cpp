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

#include "mpca/kernels.hpp"

#include <algorithm>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mpca::kernels {
namespace {

constexpr int kParallelRows = 32;

void check_forward(const Matrix& in, std::span<const double> weights, std::span<const double> bias) {
  if (weights.size() != static_cast<size_t>(in.cols) * bias.size()) {
    throw std::invalid_argument("dense_forward: weight shape mismatch");
  }
}

inline void forward_row(const double* x, int in_dim, const double* w, const double* b, int out_dim,
                        double* y) {
  std::copy(b, b + out_dim, y);
  for (int k = 0; k < in_dim; ++k) {
    const double a = x[k];
    if (a == 0.0) continue;
    const double* wk = w + static_cast<size_t>(k) * out_dim;
    for (int o = 0; o < out_dim; ++o) y[o] += a * wk[o];
  }
}

inline void grad_weight_row(const Matrix& in, const Matrix& grad_out, int k, double* gw) {
  const int out_dim = grad_out.cols;
  for (int i = 0; i < in.rows; ++i) {
    const double a = in(i, k);
    if (a == 0.0) continue;
    const double* g = grad_out.data.data() + static_cast<size_t>(i) * out_dim;
    for (int o = 0; o < out_dim; ++o) gw[o] += a * g[o];
  }
}

inline void grad_input_row(const double* g, const double* w, int in_dim, int out_dim, double* gx) {
  for (int k = 0; k < in_dim; ++k) {
    const double* wk = w + static_cast<size_t>(k) * out_dim;
    double s = 0.0;
    for (int o = 0; o < out_dim; ++o) s += g[o] * wk[o];
    gx[k] = s;
  }
}

inline void grad_bias(const Matrix& grad_out, std::span<double> grad_b) {
  for (int i = 0; i < grad_out.rows; ++i) {
    for (int o = 0; o < grad_out.cols; ++o) grad_b[o] += grad_out(i, o);
  }
}

}  // namespace

int worker_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_worker_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

void dense_forward(const Matrix& in, std::span<const double> weights, std::span<const double> bias,
                   Matrix& out) {
  check_forward(in, weights, bias);
  const int out_dim = static_cast<int>(bias.size());
  if (out.rows != in.rows || out.cols != out_dim) out.resize(in.rows, out_dim);
  const double* w = weights.data();
  const double* b = bias.data();
#pragma omp parallel for schedule(static) if (in.rows >= kParallelRows)
  for (int i = 0; i < in.rows; ++i) {
    forward_row(in.data.data() + static_cast<size_t>(i) * in.cols, in.cols, w, b, out_dim,
                out.data.data() + static_cast<size_t>(i) * out_dim);
  }
}

void dense_forward_serial(const Matrix& in, std::span<const double> weights,
                          std::span<const double> bias, Matrix& out) {
  check_forward(in, weights, bias);
  const int out_dim = static_cast<int>(bias.size());
  if (out.rows != in.rows || out.cols != out_dim) out.resize(in.rows, out_dim);
  for (int i = 0; i < in.rows; ++i) {
    forward_row(in.data.data() + static_cast<size_t>(i) * in.cols, in.cols, weights.data(),
                bias.data(), out_dim, out.data.data() + static_cast<size_t>(i) * out_dim);
  }
}

void relu_inplace(Matrix& m) {
  for (double& x : m.data) x = x > 0.0 ? x : 0.0;
}

void relu_backward(const Matrix& activated, Matrix& grad) {
  for (size_t i = 0; i < grad.data.size(); ++i) {
    if (!(activated.data[i] > 0.0)) grad.data[i] = 0.0;
  }
}

void dense_backward(const Matrix& in, std::span<const double> weights, const Matrix& grad_out,
                    std::span<double> grad_w, std::span<double> grad_b, Matrix* grad_in) {
  const int in_dim = in.cols;
  const int out_dim = grad_out.cols;
  if (grad_w.size() != static_cast<size_t>(in_dim) * out_dim || grad_b.size() != static_cast<size_t>(out_dim) ||
      grad_out.rows != in.rows) {
    throw std::invalid_argument("dense_backward: shape mismatch");
  }
  // Each weight row is owned by one thread, so accumulation order over the
  // batch is fixed regardless of the worker count.
#pragma omp parallel for schedule(static) if (in_dim >= kParallelRows)
  for (int k = 0; k < in_dim; ++k) {
    grad_weight_row(in, grad_out, k, grad_w.data() + static_cast<size_t>(k) * out_dim);
  }
  grad_bias(grad_out, grad_b);
  if (grad_in) {
    if (grad_in->rows != in.rows || grad_in->cols != in_dim) grad_in->resize(in.rows, in_dim);
#pragma omp parallel for schedule(static) if (in.rows >= kParallelRows)
    for (int i = 0; i < in.rows; ++i) {
      grad_input_row(grad_out.data.data() + static_cast<size_t>(i) * out_dim, weights.data(), in_dim,
                     out_dim, grad_in->data.data() + static_cast<size_t>(i) * in_dim);
    }
  }
}

void dense_backward_serial(const Matrix& in, std::span<const double> weights, const Matrix& grad_out,
                           std::span<double> grad_w, std::span<double> grad_b, Matrix* grad_in) {
  const int in_dim = in.cols;
  const int out_dim = grad_out.cols;
  if (grad_w.size() != static_cast<size_t>(in_dim) * out_dim || grad_b.size() != static_cast<size_t>(out_dim) ||
      grad_out.rows != in.rows) {
    throw std::invalid_argument("dense_backward: shape mismatch");
  }
  for (int k = 0; k < in_dim; ++k) {
    grad_weight_row(in, grad_out, k, grad_w.data() + static_cast<size_t>(k) * out_dim);
  }
  grad_bias(grad_out, grad_b);
  if (grad_in) {
    if (grad_in->rows != in.rows || grad_in->cols != in_dim) grad_in->resize(in.rows, in_dim);
    for (int i = 0; i < in.rows; ++i) {
      grad_input_row(grad_out.data.data() + static_cast<size_t>(i) * out_dim, weights.data(), in_dim,
                     out_dim, grad_in->data.data() + static_cast<size_t>(i) * in_dim);
    }
  }
}

int calibrated_argmax(std::span<const double> q, std::span<const double> cost, double lambda,
                      std::span<const unsigned char> mask) {
  if (q.size() != cost.size() || q.empty()) throw std::invalid_argument("calibrated_argmax: size mismatch");
  int best = -1;
  double best_val = 0.0;
  for (size_t a = 0; a < q.size(); ++a) {
    if (!mask.empty() && !mask[a]) continue;
    double v = q[a] - lambda * cost[a];
    if (best < 0 || v > best_val || (v == best_val && cost[a] < cost[best])) {
      best = static_cast<int>(a);
      best_val = v;
    }
  }
  if (best < 0) throw std::invalid_argument("calibrated_argmax: no admissible action");
  return best;
}

}  // namespace mpca::kernels
