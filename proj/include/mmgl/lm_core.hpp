#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmgl/autodiff.hpp"
#include "mmgl/checkpoint.hpp"
#include "mmgl/rng.hpp"
#include "mmgl/tensor.hpp"

namespace mmgl::lm {

struct ModelConfig {
  std::size_t vocab_size = 2048;
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t max_seq_len = 512;
  bool cross_attention = false;
  std::size_t cross_stride = 1;  // gated block before every stride-th layer
  uint64_t seed = 1;

  void validate() const;
};

struct DecoderLayer {
  Tensor ln1_g, ln1_b;
  Tensor wq, wk, wv, wo;  // [d_model x d_model], no biases
  Tensor ln2_g, ln2_b;
  Tensor w1, b1, w2, b2;  // feed-forward with relu
};

// out = x + tanh(g_attn)*CrossAttn(x, memory), then + tanh(g_ff)*FF(.).
// Both gates start at zero, making the block an identity map.
struct GatedCrossAttnBlock {
  Tensor wq, wk, wv, wo;
  Tensor w1, b1, w2, b2;
  Tensor g_attn, g_ff;  // scalars
};

// Per-layer adaptation points the model honors without knowing who set them.
struct LayerHooks {
  Tensor prefix_k, prefix_v;  // [l x d_model] rows prepended to keys/values
  struct LowRank {
    bool active = false;
    Tensor a, b;  // [d x r], [r x d]
    double scale = 1.0;
  };
  LowRank lora_q, lora_v;
};

struct PeftHooks {
  std::vector<LayerHooks> layers;  // empty, or one entry per decoder layer
};

// Model-ready rows: token ids with injected embedding rows, per-row position
// encodings selected from a per-element table, and optional memory rows for
// the cross-attention side.
struct ForwardInput {
  std::vector<int> token_ids;
  std::vector<int> embed_slot;  // per row: -1 or row index into embeds
  Tensor embeds;                // [n_embed x d_model]
  std::vector<int> pe_select;   // per row: element index into pe, -1 = none
  Tensor pe;                    // [n_elements x d_model]
  Tensor memory;                // [m x d_model]
};

struct Model {
  ModelConfig cfg;
  Tensor embed;  // [vocab x d_model], tied with the output projection
  std::vector<DecoderLayer> layers;
  std::vector<GatedCrossAttnBlock> cross;
  std::vector<int> cross_at;  // per layer: index into cross, -1 = none
  Tensor final_g, final_b;

  static Model init(const ModelConfig& cfg);

  // Storage-sharing views over every parameter, stable names for checkpoints.
  std::vector<ckpt::NamedTensor> named_params() const;
  std::size_t param_count() const;

  // Hidden states after the final norm, [T x d_model].
  Tensor forward_hidden(const ForwardInput& in, const PeftHooks* hooks, Tape* tape) const;
  // Tied-projection logits for every row, [T x vocab].
  Tensor forward(const ForwardInput& in, const PeftHooks* hooks, Tape* tape) const;
  // Mean cross-entropy of next-token predictions at loss_rows.
  Tensor summary_loss(const ForwardInput& in, const std::vector<std::size_t>& loss_rows,
                      const std::vector<int>& targets, const PeftHooks* hooks, Tape* tape) const;
  // Argmax decoding from a prompt that ends at the summary marker. Stops at
  // eos_id (not included in the result) or after max_new tokens.
  std::vector<int> generate_greedy(const ForwardInput& prompt, std::size_t max_new, int eos_id,
                                   const PeftHooks* hooks) const;
};

}  // namespace mmgl::lm
