#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lrfr/common.hpp"

namespace lrfr {

// Dense row-major tensor of doubles. Gradient checks require 64-bit
// precision, so the whole numeric stack runs on doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(size_t(numel_of(shape_)), 0.0);
  }

  Tensor(std::vector<int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check(int64_t(data_.size()) == numel_of(shape_),
          "tensor: data length ", data_.size(), " does not match shape ",
          shape_str());
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return int64_t(data_.size()); }
  int64_t dim(size_t i) const {
    check(i < shape_.size(), "tensor: dim index ", i, " out of rank ",
          shape_.size());
    return shape_[i];
  }
  size_t rank() const { return shape_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[size_t(i)]; }
  double operator[](int64_t i) const { return data_[size_t(i)]; }

  bool requires_grad = false;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const;
  // Index of the first non-finite element, or -1.
  int64_t first_nonfinite() const;

  std::string shape_str() const;

  static int64_t numel_of(const std::vector<int64_t>& shape);

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

using NamedTensors = std::map<std::string, Tensor>;

}  // namespace lrfr
