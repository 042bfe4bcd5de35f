#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cparr {

// Dense row-major tensor of doubles. All training-path math is done in
// 64-bit floats; 32-bit is used only in on-disk feature sidecars.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(element_count(shape), 0.0) {}

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape); }

  static Tensor from_values(std::vector<std::size_t> s, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(s);
    if (values.size() != element_count(t.shape)) {
      throw std::invalid_argument("tensor: value count does not match shape");
    }
    t.data = std::move(values);
    return t;
  }

  std::size_t size() const { return data.size(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // 2-D access, shape {rows, cols}
  double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  // 3-D access, shape {rows, cols, channels}
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * shape[1] + x) * shape[2] + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * shape[1] + x) * shape[2] + c];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

inline void accumulate(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) throw std::invalid_argument("accumulate: shape mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace cparr
