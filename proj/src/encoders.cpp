#include "mmgl/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mmgl::encoders {

namespace {

FrozenEncoder make(EncoderKind kind, uint64_t seed, std::size_t d_in, std::size_t d_enc) {
  if (d_in == 0 || d_enc == 0)
    throw std::invalid_argument("encoder: dimensions must be positive");
  FrozenEncoder enc;
  enc.kind = kind;
  enc.seed = seed;
  enc.d_in = d_in;
  enc.d_enc = d_enc;
  enc.projection.resize(d_in * d_enc);
  Rng rng(seed);
  for (double& x : enc.projection) x = rng.normal();
  return enc;
}

void l2_normalize(std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq == 0.0) return;
  double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
}

}  // namespace

FrozenEncoder FrozenEncoder::make_text(uint64_t seed, std::size_t vocab_size,
                                       std::size_t d_enc) {
  return make(EncoderKind::Text, seed, vocab_size, d_enc);
}

FrozenEncoder FrozenEncoder::make_image(uint64_t seed, std::size_t feature_width,
                                        std::size_t d_enc) {
  return make(EncoderKind::Image, seed, feature_width, d_enc);
}

std::vector<double> encode_text(const std::vector<int>& tokens, const FrozenEncoder& enc) {
  if (enc.kind != EncoderKind::Text)
    throw std::invalid_argument("encode_text: encoder is not a text encoder");
  std::vector<double> out(enc.d_enc, 0.0);
  if (tokens.empty()) return out;
  // Summing in sorted id order makes the (mathematical) order-freeness of the
  // mean exact in floating point too.
  std::vector<int> ids = tokens;
  std::sort(ids.begin(), ids.end());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= enc.d_in)
      throw std::out_of_range("encode_text: token id " + std::to_string(id) +
                              " outside [0, " + std::to_string(enc.d_in) + ")");
    const double* row = enc.projection.data() + static_cast<std::size_t>(id) * enc.d_enc;
    for (std::size_t j = 0; j < enc.d_enc; ++j) out[j] += row[j];
  }
  double inv_n = 1.0 / static_cast<double>(tokens.size());
  for (double& x : out) x *= inv_n;
  l2_normalize(out);
  return out;
}

std::vector<double> encode_image(const std::vector<double>& feature, const FrozenEncoder& enc) {
  if (enc.kind != EncoderKind::Image)
    throw std::invalid_argument("encode_image: encoder is not an image encoder");
  if (feature.size() != enc.d_in)
    throw std::invalid_argument("encode_image: feature width " +
                                std::to_string(feature.size()) + " != encoder input width " +
                                std::to_string(enc.d_in));
  std::vector<double> out(enc.d_enc, 0.0);
  for (std::size_t i = 0; i < enc.d_in; ++i) {
    double f = feature[i];
    if (f == 0.0) continue;
    const double* row = enc.projection.data() + i * enc.d_enc;
    for (std::size_t j = 0; j < enc.d_enc; ++j) out[j] += f * row[j];
  }
  l2_normalize(out);
  return out;
}

Mapper Mapper::init(Rng& rng, std::size_t d_enc, std::size_t d_model, double stddev) {
  Mapper m;
  m.weight = Tensor::randn({d_enc, d_model}, rng, stddev);
  m.bias = Tensor::zeros({d_model});
  return m;
}

Tensor map_rows(const std::vector<std::vector<double>>& encoded, const Mapper& m, Tape* tape) {
  std::size_t d_enc = m.weight.rows();
  Tensor x = Tensor::zeros({encoded.size(), d_enc});
  for (std::size_t r = 0; r < encoded.size(); ++r) {
    if (encoded[r].size() != d_enc)
      throw std::invalid_argument("map_rows: encoded row " + std::to_string(r) + " has width " +
                                  std::to_string(encoded[r].size()) + ", mapper expects " +
                                  std::to_string(d_enc));
    std::copy(encoded[r].begin(), encoded[r].end(), x.data() + r * d_enc);
  }
  return add_bias(matmul(x, m.weight, tape), m.bias, tape);
}

Tensor map_to_lm(const std::vector<double>& e, const Mapper& m, Tape* tape) {
  return map_rows({e}, m, tape);
}

}  // namespace mmgl::encoders
