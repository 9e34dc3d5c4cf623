// SPDX-License-Identifier: Apache-2.0
//
// Toy models: a byte-level language model built from an embedding table,
// a residual stack of gated MLP blocks and a linear head, plus the small
// single-block regression net the weight-alignment experiment trains.

#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "fp8lab/blocks.hpp"
#include "fp8lab/dataset.hpp"
#include "fp8lab/linear.hpp"
#include "fp8lab/losses.hpp"

namespace fp8lab {

enum class Activation { swiglu, smooth_swiglu, gelu };
enum class Precision {
  bf16_baseline,
  fp8_full,
  fp8_swiglu_out_bf16,
  fp8_smooth_swiglu
};

const char* activation_str(Activation a);
Activation activation_from_str(const std::string& s);
const char* precision_str(Precision p);
Precision precision_from_str(const std::string& s);

// Map a run precision onto the per-tensor-class policy. With
// force_no_quant every mode collapses to the plain wide path, so all four
// precisions produce bit-identical runs.
PrecisionPolicy policy_for(Precision p, Activation a, bool force_no_quant);

struct ModelConfig {
  std::size_t vocab = 256;
  std::size_t context = 4;
  std::size_t d_embed = 16;  // model width = context * d_embed
  std::size_t hidden = 224;
  std::size_t n_blocks = 4;
  Activation activation = Activation::swiglu;
  double mu = 0.0;  // coupled l2 strength (decoupled decay is the
                    // optimizer's weight_decay instead)

  std::size_t width() const { return context * d_embed; }
  void validate() const;
};

class ByteLmModel {
 public:
  ByteLmModel(ModelConfig cfg, std::uint64_t seed);

  // Forward + backward over one batch. Returns the loss (including the
  // coupled l2 term when mu > 0) and fills one gradient per parameter.
  double loss_and_grads(const std::vector<int>& inputs,
                        const std::vector<int>& targets, std::size_t batch,
                        const PrecisionPolicy& pol, QuantContext& qc,
                        std::vector<Tensor>& grads);

  // Forward only; logits for the batch.
  Tensor logits(const std::vector<int>& inputs, std::size_t batch,
                const PrecisionPolicy& pol, QuantContext& qc);

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t n_params() const;

  const ModelConfig& config() const { return cfg_; }
  std::size_t n_gated_blocks() const { return swiglu_.size() + gelu_.size(); }
  const std::vector<SwiGluBlock>& swiglu_blocks() const { return swiglu_; }
  std::vector<SwiGluBlock>& swiglu_blocks() { return swiglu_; }
  // Input / raw gate output of block b during the last loss_and_grads call.
  const Tensor& last_block_input(std::size_t b) const;
  const Tensor& last_gate_output(std::size_t b) const;

 private:
  Tensor embed(const std::vector<int>& inputs, std::size_t batch) const;

  ModelConfig cfg_;
  Tensor emb_;  // [vocab x d_embed]
  std::vector<SwiGluBlock> swiglu_;
  std::vector<GeluBlock> gelu_;
  LinearLayer head_;
  std::vector<std::string> names_;
  std::vector<Tensor> block_inputs_;   // saved by loss_and_grads
  std::vector<Tensor> gate_outputs_;
};

// Single gated block with scalar output trained under an arbitrary
// precision policy; the spike-stream runs use it.
class RegressionModel {
 public:
  RegressionModel(std::size_t in_dim, std::size_t hidden, Activation act,
                  std::uint64_t seed, double mu = 0.0);

  double loss_and_grads(const Tensor& inputs, const Tensor& targets,
                        const PrecisionPolicy& pol, QuantContext& qc,
                        std::vector<Tensor>& grads);

  std::vector<Tensor*> parameters();
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t n_params() const;
  const SwiGluBlock* swiglu_block() const {
    return gated_ ? &sblock_ : nullptr;
  }
  const Tensor& last_input() const { return last_input_; }
  const Tensor& last_gate_output() const { return gate_output_; }

 private:
  bool gated_;
  double mu_;
  SwiGluBlock sblock_;
  GeluBlock gblock_;
  std::vector<std::string> names_;
  Tensor last_input_, gate_output_;
};

// Single SwiGLU block with scalar output; trained full-batch with coupled
// l2 by the alignment experiment. Always wide precision.
class SwiGluRegressionNet {
 public:
  SwiGluRegressionNet(std::size_t in_dim, std::size_t hidden,
                      std::uint64_t seed);

  std::size_t n_params() const;
  // 0.5 mean squared error + (mu/2)(|w1|^2+|w2|^2+|w3|^2); grads coupled.
  double loss_and_grads(const Tensor& inputs, const Tensor& targets,
                        double mu, SwiGluBlock::Grads& grads);
  static double grad_norm(const SwiGluBlock::Grads& g);

  SwiGluBlock block;
};

}  // namespace fp8lab
