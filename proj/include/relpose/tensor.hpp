#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "relpose/error.hpp"

namespace relpose::ad {

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

// Dense row-major n-d array. The scalar type is a template parameter:
// float for training, double for finite-difference checks.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(count(shape)), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != static_cast<std::size_t>(count(shape)))
      throw ShapeMismatch("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
  }

  static long long count(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) {
      if (d <= 0) throw ShapeMismatch("non-positive dim in shape " + shape_str(s));
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    for (T& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }
  static Tensor vec(std::vector<T> d) {
    const int n = static_cast<int>(d.size());
    return Tensor({n}, std::move(d));
  }

  int size() const { return static_cast<int>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // 2-d accessors for the common matrix case.
  T& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  const T& at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * shape[1] + c];
  }
  // 3-d accessor (channel, row, col).
  T& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (const T& x : data)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape) + " vs " +
                        shape_str(b.shape));
}

}  // namespace relpose::ad
