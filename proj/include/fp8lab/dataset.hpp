// SPDX-License-Identifier: Apache-2.0
//
// Data sources for the toy experiments: a byte-level corpus (vocab 256)
// with deterministic window sampling, teacher-network regression sets and
// a stationary stream with a scheduled amplitude spike.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fp8lab/tensor.hpp"

namespace fp8lab {

class ByteCorpus {
 public:
  static ByteCorpus load(const std::string& path);  // rejects empty files
  static ByteCorpus from_bytes(std::vector<std::uint8_t> bytes);

  std::size_t size() const { return bytes_.size(); }

  // Deterministic batch for (seed, step): batch windows of context bytes
  // plus the next byte as target.
  void sample(std::uint64_t seed, std::int64_t step, std::size_t batch,
              std::size_t context, std::vector<int>& inputs,
              std::vector<int>& targets) const;

 private:
  std::vector<std::uint8_t> bytes_;
};

// Deterministic pseudo-text: an order-2 Markov chain over a small byte
// alphabet with seeded sparse transitions. Learnable structure with a
// well-defined entropy floor; used by tests and the CLI demo corpus.
std::vector<std::uint8_t> make_markov_text(std::uint64_t seed,
                                           std::size_t length);

struct RegressionSpec {
  std::size_t n_samples = 1024;
  std::size_t in_dim = 4;
  std::size_t teacher_hidden = 16;
  double input_scale = 1.0;   // multiplies the standard normal inputs
  double teacher_scale = 1.0; // multiplies the teacher gate weights
  double noise = 0.0;         // target noise stddev
};

struct RegressionData {
  Tensor inputs;   // [n x in_dim]
  Tensor targets;  // [n x 1]
};

// Fixed random SwiGLU teacher; wider than the students that fit it, so
// the fit stays under-parameterized and the residual gradients persist.
RegressionData make_regression(std::uint64_t seed, const RegressionSpec& spec);

struct SpikeStreamSpec {
  std::size_t in_dim = 16;
  std::size_t batch = 32;
  std::size_t teacher_hidden = 16;
  double spike_factor = 100.0;
  std::int64_t spike_iteration = 500;
};

// Stationary regression batches; at spike_iteration the inputs of that
// one batch are multiplied by spike_factor.
class SpikeStream {
 public:
  SpikeStream(std::uint64_t seed, SpikeStreamSpec spec);
  const SpikeStreamSpec& spec() const { return spec_; }
  void batch(std::int64_t step, Tensor& inputs, Tensor& targets) const;

 private:
  SpikeStreamSpec spec_;
  std::uint64_t seed_;
  Tensor teacher_w1_, teacher_w2_, teacher_w3_;
};

}  // namespace fp8lab
