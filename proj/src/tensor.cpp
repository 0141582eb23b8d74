#include "lrfr/tensor.hpp"

#include <cmath>

namespace lrfr {

int64_t Tensor::numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    check(e > 0, "tensor: non-positive extent ", e);
    n *= e;
  }
  return n;
}

bool Tensor::all_finite() const { return first_nonfinite() < 0; }

int64_t Tensor::first_nonfinite() const {
  for (size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) return int64_t(i);
  }
  return -1;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

}  // namespace lrfr
