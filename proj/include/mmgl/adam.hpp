#pragma once

#include <cstdint>
#include <vector>

#include "mmgl/tensor.hpp"

namespace mmgl {

// Adam with bias correction. One state object serves a fixed list of
// parameter tensors; moment buffers are laid out per parameter and match its
// shape. Gradients are read from each tensor's grad buffer.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamState adam_init(const std::vector<Tensor>& params, double lr);

// One update. Scans all gradients first: any non-finite value aborts with an
// error before anything (including the step counter) is touched.
void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace mmgl
