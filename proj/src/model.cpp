// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/model.hpp"

#include <cmath>
#include <stdexcept>

#include "fp8lab/rng.hpp"

namespace fp8lab {

const char* activation_str(Activation a) {
  switch (a) {
    case Activation::swiglu: return "swiglu";
    case Activation::smooth_swiglu: return "smooth_swiglu";
    case Activation::gelu: return "gelu";
  }
  return "?";
}

Activation activation_from_str(const std::string& s) {
  if (s == "swiglu") return Activation::swiglu;
  if (s == "smooth_swiglu") return Activation::smooth_swiglu;
  if (s == "gelu") return Activation::gelu;
  throw std::invalid_argument("unknown activation: " + s);
}

const char* precision_str(Precision p) {
  switch (p) {
    case Precision::bf16_baseline: return "bf16_baseline";
    case Precision::fp8_full: return "fp8_full";
    case Precision::fp8_swiglu_out_bf16: return "fp8_swiglu_out_bf16";
    case Precision::fp8_smooth_swiglu: return "fp8_smooth_swiglu";
  }
  return "?";
}

Precision precision_from_str(const std::string& s) {
  if (s == "bf16_baseline") return Precision::bf16_baseline;
  if (s == "fp8_full") return Precision::fp8_full;
  if (s == "fp8_swiglu_out_bf16") return Precision::fp8_swiglu_out_bf16;
  if (s == "fp8_smooth_swiglu") return Precision::fp8_smooth_swiglu;
  throw std::invalid_argument("unknown precision: " + s);
}

PrecisionPolicy policy_for(Precision p, Activation a, bool force_no_quant) {
  if (force_no_quant) return {QuantPolicyMode::none, SwigluOutQuant::wide};
  PrecisionPolicy pol;
  switch (p) {
    case Precision::bf16_baseline:
      pol.matmul_io = QuantPolicyMode::bf16;
      // the BF16 smooth ablation smooths around a BF16 quantizer
      pol.swiglu_out = a == Activation::smooth_swiglu
                           ? SwigluOutQuant::per_channel
                           : SwigluOutQuant::bf16_unit;
      break;
    case Precision::fp8_full:
      pol.matmul_io = QuantPolicyMode::fp8_hybrid;
      pol.swiglu_out = SwigluOutQuant::e4m3_delayed;
      break;
    case Precision::fp8_swiglu_out_bf16:
      pol.matmul_io = QuantPolicyMode::fp8_hybrid;
      pol.swiglu_out = SwigluOutQuant::bf16_unit;
      break;
    case Precision::fp8_smooth_swiglu:
      if (a == Activation::gelu)
        throw std::invalid_argument(
            "fp8_smooth_swiglu requires a gated activation");
      pol.matmul_io = QuantPolicyMode::fp8_hybrid;
      pol.swiglu_out = SwigluOutQuant::per_channel;
      break;
  }
  return pol;
}

void ModelConfig::validate() const {
  if (vocab == 0 || context == 0 || d_embed == 0 || hidden == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (n_blocks == 0) throw std::invalid_argument("need at least one block");
}

namespace {

Tensor init_weight(std::size_t rows, std::size_t cols, Prng& rng) {
  Tensor w({rows, cols});
  const double bound = 1.0 / std::sqrt(double(rows));
  for (auto& v : w.data) v = rng.next_uniform(-bound, bound);
  return w;
}

}  // namespace

ByteLmModel::ByteLmModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t d = cfg_.width();
  Prng rng(seed, "init");
  emb_ = Tensor({cfg_.vocab, cfg_.d_embed});
  for (auto& v : emb_.data) v = rng.next_normal() * 0.5;
  names_.push_back("emb");
  const bool gated = cfg_.activation != Activation::gelu;
  for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    if (gated) {
      SwiGluBlock blk;
      blk.w1 = init_weight(d, cfg_.hidden, rng);
      blk.w2 = init_weight(d, cfg_.hidden, rng);
      blk.w3 = init_weight(cfg_.hidden, d, rng);
      swiglu_.push_back(std::move(blk));
      names_.push_back(prefix + ".w1");
      names_.push_back(prefix + ".w2");
      names_.push_back(prefix + ".w3");
    } else {
      GeluBlock blk;
      blk.wa = init_weight(d, cfg_.hidden, rng);
      blk.wb = init_weight(cfg_.hidden, d, rng);
      gelu_.push_back(std::move(blk));
      names_.push_back(prefix + ".wa");
      names_.push_back(prefix + ".wb");
    }
  }
  head_.W = init_weight(cfg_.vocab, d, rng);
  names_.push_back("head.w");
}

std::vector<Tensor*> ByteLmModel::parameters() {
  std::vector<Tensor*> ps;
  ps.push_back(&emb_);
  for (auto& b : swiglu_) {
    ps.push_back(&b.w1);
    ps.push_back(&b.w2);
    ps.push_back(&b.w3);
  }
  for (auto& b : gelu_) {
    ps.push_back(&b.wa);
    ps.push_back(&b.wb);
  }
  ps.push_back(&head_.W);
  return ps;
}

std::vector<const Tensor*> ByteLmModel::parameters() const {
  auto ps = const_cast<ByteLmModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t ByteLmModel::n_params() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

const Tensor& ByteLmModel::last_block_input(std::size_t b) const {
  return block_inputs_.at(b);
}

const Tensor& ByteLmModel::last_gate_output(std::size_t b) const {
  return gate_outputs_.at(b);
}

Tensor ByteLmModel::embed(const std::vector<int>& inputs,
                          std::size_t batch) const {
  if (inputs.size() != batch * cfg_.context)
    throw std::invalid_argument("embed: batch x context inputs required");
  Tensor x({batch, cfg_.width()});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < cfg_.context; ++c) {
      const int tok = inputs[b * cfg_.context + c];
      if (tok < 0 || std::size_t(tok) >= cfg_.vocab)
        throw std::invalid_argument("embed: token out of range");
      for (std::size_t j = 0; j < cfg_.d_embed; ++j)
        x(b, c * cfg_.d_embed + j) = emb_(std::size_t(tok), j);
    }
  return x;
}

Tensor ByteLmModel::logits(const std::vector<int>& inputs, std::size_t batch,
                           const PrecisionPolicy& pol, QuantContext& qc) {
  Tensor stream = embed(inputs, batch);
  const bool gated = cfg_.activation != Activation::gelu;
  for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
    const std::string tag = "block" + std::to_string(b);
    Tensor y = gated ? swiglu_[b].forward(stream, pol, qc, tag, nullptr)
                     : gelu_[b].forward(stream, pol, qc, tag, nullptr);
    for (std::size_t i = 0; i < stream.size(); ++i) stream[i] += y[i];
  }
  return linear_forward(stream, head_, pol.matmul_io, qc, "head");
}

double ByteLmModel::loss_and_grads(const std::vector<int>& inputs,
                                   const std::vector<int>& targets,
                                   std::size_t batch,
                                   const PrecisionPolicy& pol,
                                   QuantContext& qc,
                                   std::vector<Tensor>& grads) {
  if (targets.size() != batch)
    throw std::invalid_argument("one target per batch row required");
  const bool gated = cfg_.activation != Activation::gelu;

  Tensor stream = embed(inputs, batch);
  block_inputs_.assign(cfg_.n_blocks, Tensor{});
  gate_outputs_.assign(cfg_.n_blocks, Tensor{});
  std::vector<SwiGluBlock::Cache> scaches(swiglu_.size());
  std::vector<GeluBlock::Cache> gcaches(gelu_.size());
  for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
    const std::string tag = "block" + std::to_string(b);
    block_inputs_[b] = stream;
    Tensor y = gated
                   ? swiglu_[b].forward(stream, pol, qc, tag, &scaches[b])
                   : gelu_[b].forward(stream, pol, qc, tag, &gcaches[b]);
    if (gated) gate_outputs_[b] = scaches[b].u_raw;
    for (std::size_t i = 0; i < stream.size(); ++i) stream[i] += y[i];
  }
  LinearCache head_cache;
  Tensor out = linear_forward(stream, head_, pol.matmul_io, qc, "head",
                              &head_cache);
  LossResult lr = cross_entropy(out, targets);

  // backward
  grads.assign(names_.size(), Tensor{});
  LinearGrads head_grads;
  Tensor dstream = linear_backward(lr.dinput, head_cache, head_,
                                   pol.matmul_io, qc, "head", head_grads);
  grads.back() = std::move(head_grads.dW);
  for (std::size_t b = cfg_.n_blocks; b-- > 0;) {
    const std::string tag = "block" + std::to_string(b);
    if (gated) {
      SwiGluBlock::Grads g;
      Tensor dx = swiglu_[b].backward(dstream, scaches[b], pol, qc, tag, g);
      for (std::size_t i = 0; i < dstream.size(); ++i) dstream[i] += dx[i];
      grads[1 + b * 3 + 0] = std::move(g.dw1);
      grads[1 + b * 3 + 1] = std::move(g.dw2);
      grads[1 + b * 3 + 2] = std::move(g.dw3);
    } else {
      GeluBlock::Grads g;
      Tensor dx = gelu_[b].backward(dstream, gcaches[b], pol, qc, tag, g);
      for (std::size_t i = 0; i < dstream.size(); ++i) dstream[i] += dx[i];
      grads[1 + b * 2 + 0] = std::move(g.dwa);
      grads[1 + b * 2 + 1] = std::move(g.dwb);
    }
  }
  // embedding gradient: scatter-add of the stream gradient
  Tensor demb(emb_.shape);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < cfg_.context; ++c) {
      const int tok = inputs[b * cfg_.context + c];
      for (std::size_t j = 0; j < cfg_.d_embed; ++j)
        demb(std::size_t(tok), j) += dstream(b, c * cfg_.d_embed + j);
    }
  grads.front() = std::move(demb);

  double loss = lr.value;
  if (cfg_.mu > 0.0) {
    auto ps = parameters();
    loss += l2_penalty(std::span<const Tensor* const>(
                           const_cast<const Tensor* const*>(ps.data()),
                           ps.size()),
                       cfg_.mu);
    for (std::size_t p = 0; p < ps.size(); ++p)
      add_l2_penalty_grad(*ps[p], cfg_.mu, grads[p]);
  }
  return loss;
}

RegressionModel::RegressionModel(std::size_t in_dim, std::size_t hidden,
                                 Activation act, std::uint64_t seed,
                                 double mu)
    : gated_(act != Activation::gelu), mu_(mu) {
  Prng rng(seed, "init");
  if (gated_) {
    sblock_.w1 = init_weight(in_dim, hidden, rng);
    sblock_.w2 = init_weight(in_dim, hidden, rng);
    sblock_.w3 = init_weight(hidden, 1, rng);
    names_ = {"block0.w1", "block0.w2", "block0.w3"};
  } else {
    gblock_.wa = init_weight(in_dim, hidden, rng);
    gblock_.wb = init_weight(hidden, 1, rng);
    names_ = {"block0.wa", "block0.wb"};
  }
}

std::vector<Tensor*> RegressionModel::parameters() {
  if (gated_) return {&sblock_.w1, &sblock_.w2, &sblock_.w3};
  return {&gblock_.wa, &gblock_.wb};
}

std::size_t RegressionModel::n_params() const {
  std::size_t n = 0;
  for (const Tensor* t :
       const_cast<RegressionModel*>(this)->parameters())
    n += t->size();
  return n;
}

double RegressionModel::loss_and_grads(const Tensor& inputs,
                                       const Tensor& targets,
                                       const PrecisionPolicy& pol,
                                       QuantContext& qc,
                                       std::vector<Tensor>& grads) {
  last_input_ = inputs;
  grads.assign(names_.size(), Tensor{});
  LossResult lr;
  if (gated_) {
    SwiGluBlock::Cache cache;
    Tensor pred = sblock_.forward(inputs, pol, qc, "block0", &cache);
    gate_output_ = cache.u_raw;
    lr = squared_error(pred, targets);
    SwiGluBlock::Grads g;
    sblock_.backward(lr.dinput, cache, pol, qc, "block0", g);
    grads[0] = std::move(g.dw1);
    grads[1] = std::move(g.dw2);
    grads[2] = std::move(g.dw3);
  } else {
    GeluBlock::Cache cache;
    Tensor pred = gblock_.forward(inputs, pol, qc, "block0", &cache);
    gate_output_ = cache.a_used;
    lr = squared_error(pred, targets);
    GeluBlock::Grads g;
    gblock_.backward(lr.dinput, cache, pol, qc, "block0", g);
    grads[0] = std::move(g.dwa);
    grads[1] = std::move(g.dwb);
  }
  double loss = lr.value;
  if (mu_ > 0.0) {
    auto ps = parameters();
    loss += l2_penalty(std::span<const Tensor* const>(
                           const_cast<const Tensor* const*>(ps.data()),
                           ps.size()),
                       mu_);
    for (std::size_t p = 0; p < ps.size(); ++p)
      add_l2_penalty_grad(*ps[p], mu_, grads[p]);
  }
  return loss;
}

SwiGluRegressionNet::SwiGluRegressionNet(std::size_t in_dim,
                                         std::size_t hidden,
                                         std::uint64_t seed) {
  Prng rng(seed, "regnet-init");
  block.w1 = init_weight(in_dim, hidden, rng);
  block.w2 = init_weight(in_dim, hidden, rng);
  block.w3 = init_weight(hidden, 1, rng);
}

std::size_t SwiGluRegressionNet::n_params() const {
  return block.w1.size() + block.w2.size() + block.w3.size();
}

double SwiGluRegressionNet::loss_and_grads(const Tensor& inputs,
                                           const Tensor& targets, double mu,
                                           SwiGluBlock::Grads& grads) {
  QuantContext qc;
  qc.set_enabled(false);
  PrecisionPolicy pol;  // wide
  SwiGluBlock::Cache cache;
  Tensor pred = block.forward(inputs, pol, qc, "reg", &cache);
  LossResult lr = squared_error(pred, targets);
  block.backward(lr.dinput, cache, pol, qc, "reg", grads);
  double loss = lr.value;
  if (mu > 0.0) {
    const Tensor* ps[] = {&block.w1, &block.w2, &block.w3};
    loss += l2_penalty(ps, mu);
    add_l2_penalty_grad(block.w1, mu, grads.dw1);
    add_l2_penalty_grad(block.w2, mu, grads.dw2);
    add_l2_penalty_grad(block.w3, mu, grads.dw3);
  }
  return loss;
}

double SwiGluRegressionNet::grad_norm(const SwiGluBlock::Grads& g) {
  double s = 0.0;
  for (const Tensor* t : {&g.dw1, &g.dw2, &g.dw3})
    for (double v : t->data) s += v * v;
  return std::sqrt(s);
}

}  // namespace fp8lab
