#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmgl/assembly.hpp"
#include "mmgl/autodiff.hpp"
#include "mmgl/checkpoint.hpp"
#include "mmgl/encoders.hpp"
#include "mmgl/graph_pe.hpp"
#include "mmgl/lm_core.hpp"
#include "mmgl/tensor.hpp"

namespace mmgl::peft {

enum class PeftKind { Full, Prefix, LoRA, Flamingo };

struct PeftMode {
  PeftKind kind = PeftKind::Full;
  std::size_t prefix_len = 8;  // Prefix
  std::size_t rank = 8;        // LoRA
  double alpha = 16.0;         // LoRA

  static PeftMode full() { return {PeftKind::Full}; }
  static PeftMode prefix(std::size_t l) { return {PeftKind::Prefix, l}; }
  static PeftMode lora(std::size_t r, double a) { return {PeftKind::LoRA, 8, r, a}; }
  static PeftMode flamingo() { return {PeftKind::Flamingo}; }
};

std::string mode_name(PeftKind k);
PeftKind mode_from_name(const std::string& name);

// A low-rank detour around one frozen projection: effective weight
// W + (alpha/r) * A B, exact equality with W while B stays zero.
struct LoraAdapter {
  std::string host;  // name of the wrapped projection
  Tensor a, b;       // [d_in x r], [r x d_out]
  double scaling = 1.0;
};

LoraAdapter lora_wrap(const std::string& host, std::size_t d_in, std::size_t d_out,
                      std::size_t r, double alpha, Rng& rng);

// Trainable key/value rows prepended in every decoder layer. Queries never
// appear at prefix positions; l = 0 reduces to the base model.
struct PrefixParams {
  std::vector<Tensor> k, v;  // per layer, [l x d_model]
};

// Everything one experiment trains or freezes: the LM, the frozen encoders
// with their trainable mappers, the position-encoding parameters, and the
// mode-specific adaptation parameters.
struct BundleConfig {
  lm::ModelConfig model;
  graph_pe::PEConfig pe;
  assembly::NeighborEncoding encoding = assembly::NeighborEncoding::SA_TE;
  PeftMode mode;
  std::size_t d_enc = 64;
  std::size_t image_feature_width = 16;
  uint64_t encoder_seed = 7;

  void validate() const;
};

struct ModelBundle {
  BundleConfig cfg;
  lm::Model model;
  encoders::FrozenEncoder text_enc, image_enc;
  encoders::Mapper text_map, image_map;
  graph_pe::PEParams pe;
  PrefixParams prefix;              // Prefix mode
  std::vector<LoraAdapter> loras;   // LoRA mode: per layer q then v

  lm::PeftHooks hooks() const;
  std::vector<ckpt::NamedTensor> named_params() const;
};

ModelBundle make_bundle(const BundleConfig& cfg);

// Marks the mode's parameter partition: the returned tensors are trainable
// (gradient buffers armed), everything else is frozen. Mappers and PE
// parameters train in every mode; the base LM only under Full.
std::vector<Tensor> configure_trainables(ModelBundle& bundle);

struct ParamCounts {
  std::size_t trainable = 0;
  std::size_t total = 0;
  double fraction = 0.0;
};

ParamCounts count_params(const ModelBundle& bundle);

// Encodes, maps and position-encodes one assembled example into model rows.
lm::ForwardInput materialize(const ModelBundle& bundle, const assembly::AssembledInput& in,
                             Tape* tape);

// Teacher-forced loss of one assembled training example.
Tensor example_loss(const ModelBundle& bundle, const assembly::AssembledInput& in, Tape* tape);

// Greedy continuation of an assembled generation prompt.
std::vector<int> generate(const ModelBundle& bundle, const assembly::AssembledInput& prompt,
                          std::size_t max_new);

}  // namespace mmgl::peft
