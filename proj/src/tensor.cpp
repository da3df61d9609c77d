#include "dcvae/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace dcvae {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shape_string(shape));
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("tensor: shape " + shape_string(shape_) + " does not match " +
                                std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("tensor: item() on non-scalar " + shape_string(shape_));
  return data_[0];
}

std::vector<double>& Tensor::grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

const std::vector<double>& Tensor::grad() const {
  if (!grad_) throw std::logic_error("tensor: gradient slot is absent");
  return *grad_;
}

void Tensor::zero_grad() { grad_.emplace(data_.size(), 0.0); }

}  // namespace dcvae
