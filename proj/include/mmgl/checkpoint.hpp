#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mmgl/tensor.hpp"

namespace mmgl::ckpt {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Binary checkpoint. Layout, all integers little-endian:
//   magic "MMGL1"
//   u32 tensor count
//   per tensor: u32 name length, name bytes (UTF-8), u32 rank,
//               u64 per dimension, then float32 data (values are stored
//               down-converted from the in-memory float64).
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);

struct LoadedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;  // up-converted from the stored float32
};

std::vector<LoadedTensor> load_checkpoint(const std::string& path);

// Copies loaded values into the given tensors. Names and shapes must match
// one-to-one; anything missing, extra, or reshaped is an error.
void restore_into(const std::vector<LoadedTensor>& loaded, std::vector<NamedTensor>& tensors);

}  // namespace mmgl::ckpt
