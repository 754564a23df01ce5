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

#include <gtest/gtest.h>

#include <random>

#include "mpca/kernels.hpp"

namespace mpca {
namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double zero_fraction = 0.2) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(r, c);
  for (double& x : m.data) x = u(rng) < zero_fraction ? 0.0 : n(rng);
  return m;
}

std::vector<double> random_vector(size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

TEST(DenseForward, ParallelMatchesSerialBitForBit) {
  std::mt19937_64 rng(1);
  for (int rows : {1, 31, 32, 257}) {
    Matrix in = random_matrix(rows, 45, rng);
    auto w = random_vector(45 * 64, rng);
    auto b = random_vector(64, rng);
    Matrix a, s;
    kernels::dense_forward(in, w, b, a);
    kernels::dense_forward_serial(in, w, b, s);
    EXPECT_EQ(a.data, s.data) << rows;
  }
}

TEST(DenseForward, MatchesNaiveProduct) {
  std::mt19937_64 rng(2);
  Matrix in = random_matrix(5, 7, rng);
  auto w = random_vector(7 * 3, rng);
  auto b = random_vector(3, rng);
  Matrix out;
  kernels::dense_forward(in, w, b, out);
  for (int i = 0; i < 5; ++i) {
    for (int o = 0; o < 3; ++o) {
      double s = b[o];
      for (int k = 0; k < 7; ++k) s += in(i, k) * w[k * 3 + o];
      EXPECT_NEAR(out(i, o), s, 1e-12);
    }
  }
  std::vector<double> bad(5);
  EXPECT_THROW(kernels::dense_forward(in, bad, b, out), std::invalid_argument);
}

TEST(DenseBackward, ParallelMatchesSerialBitForBit) {
  std::mt19937_64 rng(3);
  Matrix in = random_matrix(300, 40, rng);
  Matrix g = random_matrix(300, 16, rng, 0.0);
  auto w = random_vector(40 * 16, rng);
  std::vector<double> gw1(40 * 16), gb1(16), gw2(40 * 16), gb2(16);
  Matrix gi1, gi2;
  kernels::dense_backward(in, w, g, gw1, gb1, &gi1);
  kernels::dense_backward_serial(in, w, g, gw2, gb2, &gi2);
  EXPECT_EQ(gw1, gw2);
  EXPECT_EQ(gb1, gb2);
  EXPECT_EQ(gi1.data, gi2.data);
}

TEST(DenseBackward, MatchesNaiveTranspose) {
  std::mt19937_64 rng(4);
  Matrix in = random_matrix(6, 4, rng);
  Matrix g = random_matrix(6, 3, rng, 0.0);
  auto w = random_vector(12, rng);
  std::vector<double> gw(12), gb(3);
  Matrix gi;
  kernels::dense_backward(in, w, g, gw, gb, &gi);
  for (int k = 0; k < 4; ++k) {
    for (int o = 0; o < 3; ++o) {
      double s = 0.0;
      for (int i = 0; i < 6; ++i) s += in(i, k) * g(i, o);
      EXPECT_NEAR(gw[k * 3 + o], s, 1e-12);
    }
  }
  for (int i = 0; i < 6; ++i) {
    for (int k = 0; k < 4; ++k) {
      double s = 0.0;
      for (int o = 0; o < 3; ++o) s += g(i, o) * w[k * 3 + o];
      EXPECT_NEAR(gi(i, k), s, 1e-12);
    }
  }
}

TEST(Relu, ForwardAndBackward) {
  Matrix m(1, 4);
  m.data = {-1.0, 0.0, 2.0, 3.0};
  kernels::relu_inplace(m);
  EXPECT_EQ(m.data, (std::vector<double>{0, 0, 2, 3}));
  Matrix g(1, 4, 1.0);
  kernels::relu_backward(m, g);
  EXPECT_EQ(g.data, (std::vector<double>{0, 0, 1, 1}));
}

TEST(CalibratedArgmax, TieBreaksToLowerCostThenIndex) {
  std::vector<double> q{5, 9}, c{1, 4};
  EXPECT_EQ(kernels::calibrated_argmax(q, c, 2.0), 0);
  EXPECT_EQ(kernels::calibrated_argmax(q, c, 0.0), 1);
  std::vector<double> tq{3, 3, 3}, tc{2, 1, 1};
  EXPECT_EQ(kernels::calibrated_argmax(tq, tc, 0.0), 1);
  std::vector<unsigned char> mask{1, 0, 1};
  EXPECT_EQ(kernels::calibrated_argmax(tq, tc, 0.0, mask), 2);
  std::vector<unsigned char> none{0, 0, 0};
  EXPECT_THROW(kernels::calibrated_argmax(tq, tc, 0.0, none), std::invalid_argument);
}

TEST(WorkerCount, Positive) { EXPECT_GE(kernels::worker_count(), 1); }

}  // namespace
}  // namespace mpca
