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

// Dense-layer kernels. Every parallel kernel has a `_serial` twin with the
// same floating-point evaluation order; tests hold the two to bit equality
// and the benchmark target compares their throughput.
//
// Weights are stored input-major: W has shape (in_dim x out_dim), so a
// forward pass is out[i] = b + sum_k in[i][k] * W[k].

#include <cstddef>
#include <span>
#include <vector>

namespace mpca {

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  void resize(int r, int c) {
    rows = r;
    cols = c;
    data.assign(static_cast<size_t>(r) * c, 0.0);
  }
  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
};

namespace kernels {

/// Worker count used by the parallel kernels (OpenMP max threads, 1 without OpenMP).
int worker_count();
void set_worker_count(int n);

void dense_forward(const Matrix& in, std::span<const double> weights, std::span<const double> bias,
                   Matrix& out);
void dense_forward_serial(const Matrix& in, std::span<const double> weights,
                          std::span<const double> bias, Matrix& out);

void relu_inplace(Matrix& m);

/// Zeroes gradient entries where the post-activation value is not positive.
void relu_backward(const Matrix& activated, Matrix& grad);

/// Accumulates grad_w += in^T * grad_out and grad_b += column sums of
/// grad_out; writes grad_in = grad_out * W^T when grad_in is non-null.
void dense_backward(const Matrix& in, std::span<const double> weights, const Matrix& grad_out,
                    std::span<double> grad_w, std::span<double> grad_b, Matrix* grad_in);
void dense_backward_serial(const Matrix& in, std::span<const double> weights, const Matrix& grad_out,
                           std::span<double> grad_w, std::span<double> grad_b, Matrix* grad_in);

/// argmax_a (q[a] - lambda * cost[a]) over admissible actions; ties go to the
/// lower-cost action, then the lower index. `mask` may be empty.
int calibrated_argmax(std::span<const double> q, std::span<const double> cost, double lambda,
                      std::span<const unsigned char> mask = {});

}  // namespace kernels
}  // namespace mpca
