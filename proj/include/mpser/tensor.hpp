#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mpser {

/// Dense row-major tensor of 64-bit reals. Shape [] denotes a scalar.
///
/// All numeric state in the toolkit (parameters, losses, gradients,
/// embeddings) lives in these. Tensors are plain values: copying copies the
/// buffer, and the autodiff graph treats them as immutable once written.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  bool is_scalar() const { return data_.size() == 1; }

  double item() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors; callers guarantee rank() == 2.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  static std::size_t shape_numel(const std::vector<std::size_t>& shape);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Renders a shape as "[2, 3]" for error messages.
std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace mpser
