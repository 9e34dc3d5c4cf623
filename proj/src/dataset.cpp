// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/dataset.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fp8lab/blocks.hpp"
#include "fp8lab/rng.hpp"

namespace fp8lab {

ByteCorpus ByteCorpus::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read corpus: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return from_bytes(std::move(bytes));
}

ByteCorpus ByteCorpus::from_bytes(std::vector<std::uint8_t> bytes) {
  if (bytes.empty()) throw std::invalid_argument("corpus is empty");
  ByteCorpus c;
  c.bytes_ = std::move(bytes);
  return c;
}

void ByteCorpus::sample(std::uint64_t seed, std::int64_t step,
                        std::size_t batch, std::size_t context,
                        std::vector<int>& inputs,
                        std::vector<int>& targets) const {
  if (bytes_.size() < context + 1)
    throw std::invalid_argument("corpus shorter than one context window");
  Prng rng(seed, "batch", std::uint64_t(step));
  inputs.assign(batch * context, 0);
  targets.assign(batch, 0);
  const std::uint64_t max_start = bytes_.size() - context - 1;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint64_t start = rng.next_below(max_start + 1);
    for (std::size_t c = 0; c < context; ++c)
      inputs[b * context + c] = int(bytes_[start + c]);
    targets[b] = int(bytes_[start + context]);
  }
}

std::vector<std::uint8_t> make_markov_text(std::uint64_t seed,
                                           std::size_t length) {
  // alphabet: 30 symbols, each (prev2, prev1) state transitions to one of
  // 3 seeded successors with fixed probabilities
  constexpr int kAlpha = 30;
  constexpr int kChoices = 3;
  Prng table_rng(seed, "markov-table");
  std::vector<std::uint8_t> succ(std::size_t(kAlpha) * kAlpha * kChoices);
  for (auto& s : succ) s = std::uint8_t('a' + int(table_rng.next_below(kAlpha)));
  Prng walk(seed, "markov-walk");
  std::vector<std::uint8_t> text(length);
  int p2 = 0, p1 = 0;
  for (std::size_t i = 0; i < length; ++i) {
    const double u = walk.next_unit();
    const int choice = u < 0.6 ? 0 : (u < 0.9 ? 1 : 2);
    const std::uint8_t ch =
        succ[std::size_t(p2 * kAlpha + p1) * kChoices + std::size_t(choice)];
    text[i] = ch;
    p2 = p1;
    p1 = int(ch - 'a');
  }
  return text;
}

namespace {

void fill_normal(Tensor& t, Prng& rng, double scale) {
  for (auto& v : t.data) v = scale * rng.next_normal();
}

}  // namespace

RegressionData make_regression(std::uint64_t seed,
                               const RegressionSpec& spec) {
  if (spec.n_samples == 0 || spec.in_dim == 0)
    throw std::invalid_argument("regression spec needs samples and in_dim");
  Prng rng(seed, "regression");
  SwiGluBlock teacher;
  teacher.w1 = Tensor({spec.in_dim, spec.teacher_hidden});
  teacher.w2 = Tensor({spec.in_dim, spec.teacher_hidden});
  teacher.w3 = Tensor({spec.teacher_hidden, 1});
  fill_normal(teacher.w1, rng, 1.0 / std::sqrt(double(spec.in_dim)));
  fill_normal(teacher.w2, rng,
              spec.teacher_scale / std::sqrt(double(spec.in_dim)));
  fill_normal(teacher.w3, rng, 1.0 / std::sqrt(double(spec.teacher_hidden)));

  RegressionData d;
  d.inputs = Tensor({spec.n_samples, spec.in_dim});
  fill_normal(d.inputs, rng, spec.input_scale);
  d.targets = swiglu_eval(d.inputs, teacher);
  if (spec.noise > 0.0)
    for (auto& v : d.targets.data) v += spec.noise * rng.next_normal();
  return d;
}

SpikeStream::SpikeStream(std::uint64_t seed, SpikeStreamSpec spec)
    : spec_(spec), seed_(seed) {
  Prng rng(seed, "spike-teacher");
  teacher_w1_ = Tensor({spec_.in_dim, spec_.teacher_hidden});
  teacher_w2_ = Tensor({spec_.in_dim, spec_.teacher_hidden});
  teacher_w3_ = Tensor({spec_.teacher_hidden, 1});
  fill_normal(teacher_w1_, rng, 1.0 / std::sqrt(double(spec_.in_dim)));
  fill_normal(teacher_w2_, rng, 1.0 / std::sqrt(double(spec_.in_dim)));
  fill_normal(teacher_w3_, rng, 1.0 / std::sqrt(double(spec_.teacher_hidden)));
}

void SpikeStream::batch(std::int64_t step, Tensor& inputs,
                        Tensor& targets) const {
  Prng rng(seed_, "spike-batch", std::uint64_t(step));
  inputs = Tensor({spec_.batch, spec_.in_dim});
  fill_normal(inputs, rng, 1.0);
  SwiGluBlock teacher{teacher_w1_, teacher_w2_, teacher_w3_, {}};
  targets = swiglu_eval(inputs, teacher);
  if (step == spec_.spike_iteration)
    for (auto& v : inputs.data) v *= spec_.spike_factor;
}

}  // namespace fp8lab
