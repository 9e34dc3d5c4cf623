// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/tensor.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace fp8lab {

namespace {
std::atomic<int> g_threads{1};

std::size_t product(const std::vector<std::size_t>& shp) {
  std::size_t p = 1;
  for (auto d : shp) p *= d;
  return p;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shp)
    : data(product(shp), 0.0), shape(std::move(shp)) {}

Tensor Tensor::zeros(std::vector<std::size_t> shp) {
  return Tensor(std::move(shp));
}

Tensor Tensor::from(std::vector<std::size_t> shp, std::vector<double> vals) {
  if (product(shp) != vals.size())
    throw std::invalid_argument("shape does not match value count");
  Tensor t;
  t.shape = std::move(shp);
  t.data = std::move(vals);
  return t;
}

std::size_t Tensor::rows() const {
  if (shape.size() != 2) throw std::invalid_argument("tensor is not 2-D");
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() != 2) throw std::invalid_argument("tensor is not 2-D");
  return shape[1];
}

double& Tensor::operator()(std::size_t i, std::size_t j) {
  return data[i * shape[1] + j];
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
  return data[i * shape[1] + j];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::amax() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::fabs(v));
  return m;
}

double Tensor::l2_norm() const {
  double s = 0.0;
  for (double v : data) s += v * v;
  return std::sqrt(s);
}

void set_num_threads(int n) { g_threads.store(n < 1 ? 1 : n); }

int num_threads() { return g_threads.load(); }

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  const int t = num_threads();
  if (t <= 1 || n < 2) {
    body(0, n);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(std::size_t(t), n);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, &errors, w, b, e] {
      try {
        body(b, e);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul shape mismatch");
  Tensor y({n, m});
  parallel_for(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      double* yi = &y.data[i * m];
      const double* ai = &a.data[i * k];
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ai[p];
        const double* bp = &b.data[p * m];
        for (std::size_t j = 0; j < m; ++j) yi[j] += av * bp[j];
      }
    }
  });
  return y;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k) throw std::invalid_argument("matmul_bt shape mismatch");
  Tensor y({n, m});
  parallel_for(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const double* ai = &a.data[i * k];
      double* yi = &y.data[i * m];
      for (std::size_t j = 0; j < m; ++j) {
        const double* bj = &b.data[j * k];
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        yi[j] = s;
      }
    }
  });
  return y;
}

Tensor matmul_ta(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != n) throw std::invalid_argument("matmul_ta shape mismatch");
  Tensor y({k, m});
  parallel_for(k, [&](std::size_t j0, std::size_t j1) {
    for (std::size_t p = 0; p < n; ++p) {
      const double* ap = &a.data[p * k];
      const double* bp = &b.data[p * m];
      for (std::size_t j = j0; j < j1; ++j) {
        const double av = ap[j];
        double* yj = &y.data[j * m];
        for (std::size_t q = 0; q < m; ++q) yj[q] += av * bp[q];
      }
    }
  });
  return y;
}

}  // namespace fp8lab
