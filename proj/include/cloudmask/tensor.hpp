#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cloudmask {

// Dense row-major array of doubles with up to four axes (batch, channel,
// height, width). An optional gradient buffer mirrors the data shape.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors; the tensor must have rank 4.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool has_grad() const { return grad_.has_value(); }
  std::span<double> grad();
  std::span<const double> grad() const;
  // Allocates (or re-zeroes) the gradient buffer.
  void zero_grad();
  void drop_grad() { grad_.reset(); }

  // Same element count, different extents.
  Tensor reshaped(Shape shape) const;

  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

std::size_t shape_size(const Tensor::Shape& shape);

// Per-channel normalization state of a batch-norm layer.
struct NormParams {
  std::vector<double> scale;
  std::vector<double> shift;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  explicit NormParams(std::size_t channels = 0)
      : scale(channels, 1.0),
        shift(channels, 0.0),
        running_mean(channels, 0.0),
        running_var(channels, 1.0) {}

  std::size_t channels() const { return scale.size(); }
  // Throws ContractViolation when vector lengths disagree or a running
  // variance is not strictly positive.
  void validate() const;
};

// Learnable content of one weighted layer. Convolutions carry a weight of
// shape [Cout, Cin, k, k] and a norm block; the classifier carries a weight
// of shape [Cout, Cin] and a bias.
struct LayerParams {
  Tensor weight;
  std::optional<Tensor> bias;
  std::optional<NormParams> norm;

  std::size_t output_channels() const { return weight.dim(0); }
  void validate() const;
};

}  // namespace cloudmask
