#include "mmgl/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mmgl {

AdamState adam_init(const std::vector<Tensor>& params, double lr) {
  AdamState s;
  s.lr = lr;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].requires_grad())
      throw std::invalid_argument("adam_init: parameter " + std::to_string(i) +
                                  " has no gradient buffer");
    s.m.emplace_back(params[i].size(), 0.0);
    s.v.emplace_back(params[i].size(), 0.0);
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) +
                                " moment buffers for " + std::to_string(params.size()) +
                                " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].requires_grad())
      throw std::invalid_argument("adam_step: parameter " + std::to_string(i) +
                                  " has no gradient buffer");
    const double* g = params[i].grad();
    for (std::size_t j = 0; j < params[i].size(); ++j)
      if (!std::isfinite(g[j]))
        throw std::runtime_error("adam_step: non-finite gradient in parameter " +
                                 std::to_string(i) + " at element " + std::to_string(j));
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* w = params[i].data();
    const double* g = params[i].grad();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      w[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace mmgl
