// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major double tensors plus the handful of deterministic matmul
// shapes the training core needs. Every output element accumulates in a
// fixed serial order, so results are bit-identical for any thread count.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace fp8lab {

struct Tensor {
  std::vector<double> data;
  std::vector<std::size_t> shape;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shp);

  static Tensor zeros(std::vector<std::size_t> shp);
  static Tensor from(std::vector<std::size_t> shp, std::vector<double> vals);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t i, std::size_t j);
  double operator()(std::size_t i, std::size_t j) const;
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  std::span<const double> span() const { return {data.data(), data.size()}; }

  bool all_finite() const;
  double amax() const;
  double l2_norm() const;
};

// Thread count for internal data parallelism. Results are bit-identical
// regardless of the value.
void set_num_threads(int n);
int num_threads();

// Partition [0, n) into contiguous chunks and run body(begin, end) on
// worker threads. body must only touch its own range of any output.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

Tensor matmul(const Tensor& a, const Tensor& b);     // [n,k]x[k,m] -> [n,m]
Tensor matmul_bt(const Tensor& a, const Tensor& b);  // [n,k]x[m,k]^T -> [n,m]
Tensor matmul_ta(const Tensor& a, const Tensor& b);  // [n,k]^T x [n,m] -> [k,m]

}  // namespace fp8lab
