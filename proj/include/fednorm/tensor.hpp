#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "fednorm/common.hpp"

namespace fednorm {

// Dense row-major tensor of 64-bit floats; the sole numeric carrier.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_))
      throw ConfigError("tensor: data length does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }

  int rows() const {
    require_rank(2);
    return shape_[0];
  }
  int cols() const {
    require_rank(2);
    return shape_[1];
  }
  int length() const {
    require_rank(1);
    return shape_[0];
  }

  std::size_t numel() const { return data_.size(); }

  double& operator()(int r, int c) {
    return data_[static_cast<std::size_t>(r) * shape_[1] + c];
  }
  double operator()(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * shape_[1] + c];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  static std::size_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw ConfigError("tensor: rank must be >= 1");
    std::size_t n = 1;
    for (int s : shape) {
      if (s <= 0) throw ConfigError("tensor: shape entries must be positive");
      n *= static_cast<std::size_t>(s);
    }
    return n;
  }

  void require_rank(int r) const {
    if (static_cast<int>(shape_.size()) != r)
      throw ConfigError("tensor: rank mismatch");
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace fednorm
