#pragma once

#include <cstdint>
#include <vector>

#include "mmgl/autodiff.hpp"
#include "mmgl/rng.hpp"
#include "mmgl/tensor.hpp"

namespace mmgl::encoders {

enum class EncoderKind { Text, Image };

// A fixed random projection standing in for a pretrained encoder. The
// projection is plain data, never a parameter: nothing can train it.
struct FrozenEncoder {
  EncoderKind kind;
  uint64_t seed = 0;
  std::size_t d_in = 0;   // vocab size (text) or feature width (image)
  std::size_t d_enc = 0;
  std::vector<double> projection;  // [d_in x d_enc], row-major

  // Bit-identical for equal (seed, dims).
  static FrozenEncoder make_text(uint64_t seed, std::size_t vocab_size, std::size_t d_enc);
  static FrozenEncoder make_image(uint64_t seed, std::size_t feature_width, std::size_t d_enc);
};

// Mean of the projection rows picked by the token ids, L2-normalized.
// An empty token list encodes to the zero vector.
std::vector<double> encode_text(const std::vector<int>& tokens, const FrozenEncoder& enc);

// feature^T * projection, L2-normalized; the zero feature stays zero.
std::vector<double> encode_image(const std::vector<double>& feature, const FrozenEncoder& enc);

// The single trainable linear layer aligning encoder space to LM space.
struct Mapper {
  Tensor weight;  // [d_enc x d_model]
  Tensor bias;    // [d_model]

  static Mapper init(Rng& rng, std::size_t d_enc, std::size_t d_model, double stddev);
};

// Applies the mapper to a stack of encoded vectors: [n x d_enc] -> [n x d_model].
// Gradients flow into the mapper only; the encoded inputs are constants.
Tensor map_rows(const std::vector<std::vector<double>>& encoded, const Mapper& m, Tape* tape);

Tensor map_to_lm(const std::vector<double>& e, const Mapper& m, Tape* tape);

}  // namespace mmgl::encoders
