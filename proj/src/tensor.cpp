#include "mmgl/tensor.hpp"

#include <sstream>
#include <stdexcept>

#include "mmgl/rng.hpp"

namespace mmgl {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->data.assign(shape_product(shape), 0.0);
  t.impl_->shape = std::move(shape);
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.impl_->data) v = value;
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data) {
  if (shape_product(shape) != data.size())
    throw std::invalid_argument("tensor: " + std::to_string(data.size()) +
                                " values do not fill shape " + shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  return t;
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.impl_->data) v = rng.normal() * stddev;
  return t;
}

std::size_t Tensor::rows() const {
  return impl_->shape.size() >= 2 ? impl_->shape[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = impl_->shape;
  if (s.empty()) return 1;
  return s.back();
}

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on)
    impl_->grad.assign(impl_->data.size(), 0.0);
  else
    impl_->grad.clear();
}

void Tensor::zero_grad() {
  for (double& g : impl_->grad) g = 0.0;
}

double Tensor::item() const {
  if (impl_->data.size() != 1)
    throw std::runtime_error("item: tensor " + shape_str(impl_->shape) + " is not a scalar");
  return impl_->data[0];
}

}  // namespace mmgl
