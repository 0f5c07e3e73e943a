#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace mmgl {

class Rng;

// Dense 64-bit float tensor. Rank 0 (scalar), 1 (vector) and 2 (matrix) are
// the only ranks the ops use. Storage is row-major. The gradient buffer
// exists exactly when requires_grad is set and always matches the data shape.
struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t rank() const { return impl_->shape.size(); }

  // Matrix accessors; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& data_vec() { return impl_->data; }
  const std::vector<double>& data_vec() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  double* grad() { return impl_->grad.data(); }
  const double* grad() const { return impl_->grad.data(); }
  std::vector<double>& grad_vec() { return impl_->grad; }
  const std::vector<double>& grad_vec() const { return impl_->grad; }
  void zero_grad();

  double item() const;
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }

  // Identity of the underlying storage, used by the optimizer and tape.
  TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> share() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace mmgl
