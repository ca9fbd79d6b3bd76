#include "cloudmask/tensor.hpp"

#include <sstream>

#include "cloudmask/errors.hpp"

namespace cloudmask {

std::size_t shape_size(const Tensor::Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

namespace {

void check_shape(const Tensor::Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw ContractViolation("tensor rank must be between 1 and 4");
  }
  for (std::size_t e : shape) {
    if (e == 0) throw ContractViolation("tensor extents must be positive");
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ContractViolation("tensor data length " +
                            std::to_string(data_.size()) +
                            " does not match shape " + shape_string());
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ContractViolation("axis out of range");
  return shape_[axis];
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h,
                   std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h,
                  std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

std::span<double> Tensor::grad() {
  if (!grad_) throw ContractViolation("tensor has no gradient buffer");
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw ContractViolation("tensor has no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() { grad_.emplace(data_.size(), 0.0); }

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ',';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

void NormParams::validate() const {
  const std::size_t c = scale.size();
  if (shift.size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw ContractViolation("normalization vectors differ in length");
  }
  for (double v : running_var) {
    if (!(v > 0.0)) {
      throw ContractViolation("running variance must be strictly positive");
    }
  }
}

void LayerParams::validate() const {
  if (weight.empty()) throw ContractViolation("layer has no weights");
  const std::size_t out = weight.dim(0);
  if (bias && bias->size() != out) {
    throw ContractViolation("bias length differs from output channels");
  }
  if (norm) {
    norm->validate();
    if (norm->channels() != out) {
      throw ContractViolation(
          "normalization length differs from output channels");
    }
  }
}

}  // namespace cloudmask
