#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kpcast/error.hpp"

namespace kpcast {

/// Dense row-major tensor of 64-bit floats.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape))
      fail(ErrorKind::Dimension, "tensor data length " + std::to_string(data.size()) + " != shape product " +
                                     std::to_string(count(shape)));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& operator()(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  std::span<const double> row_span(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
  std::span<double> row_span(std::size_t r) { return {data.data() + r * cols(), cols()}; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  /// Bitwise equality (distinguishes -0.0 from 0.0, treats identical NaN payloads as equal).
  bool bit_equal(const Tensor& o) const {
    return shape == o.shape && std::memcmp(data.data(), o.data.data(), data.size() * sizeof(double)) == 0;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) fail(ErrorKind::Dimension, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace kpcast
