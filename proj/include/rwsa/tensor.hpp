// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rwsa/common.hpp"
#include "rwsa/rng.hpp"

namespace rwsa {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major array. Copies are shallow (the buffer is shared); tensors
// produced by ops are treated as immutable, and the few places that mutate in
// place (parameter updates) own their buffers.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill_value = T(0))
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(numel(shape_), fill_value)) {
    check_positive_extents();
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(values))) {
    check_positive_extents();
    check(data_->size() == numel(shape_),
          "tensor data length " + std::to_string(data_->size()) +
              " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  T& operator[](std::size_t i) { return (*data_)[i]; }
  const T& operator[](std::size_t i) const { return (*data_)[i]; }

  const std::string& axes() const { return axes_; }
  Tensor& set_axes(std::string a) {
    check(a.empty() || a.size() == shape_.size(),
          "axis label count does not match rank");
    axes_ = std::move(a);
    return *this;
  }

  // Deep copy with its own buffer.
  Tensor clone() const {
    Tensor out;
    out.shape_ = shape_;
    out.axes_ = axes_;
    out.data_ = std::make_shared<std::vector<T>>(*data_);
    return out;
  }

  // Same buffer, new shape. Row-major order means a reshape is pure metadata.
  Tensor reshaped(Shape s, std::string new_axes = "") const {
    check(numel(s) == size(), "reshape changes element count: " +
                                  shape_str(shape_) + " -> " + shape_str(s));
    Tensor out;
    out.shape_ = std::move(s);
    out.data_ = data_;
    out.set_axes(std::move(new_axes));
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(T v) { std::fill(data_->begin(), data_->end(), v); }

  bool all_finite() const {
    const T* p = data();
    const std::size_t n = size();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(static_cast<double>(p[i]))) return false;
    }
    return true;
  }

  // Eigen views over the flat buffer.
  using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
  ArrayMap array() { return ArrayMap(data(), static_cast<Eigen::Index>(size())); }
  ConstArrayMap array() const {
    return ConstArrayMap(data(), static_cast<Eigen::Index>(size()));
  }

 private:
  void check_positive_extents() const {
    for (std::size_t d : shape_)
      check(d > 0, "tensor extents must be positive, got " + shape_str(shape_));
  }

  Shape shape_;
  std::string axes_;
  std::shared_ptr<std::vector<T>> data_;
};

template <class T>
Tensor<T> full_like(const Tensor<T>& x, T v) {
  return Tensor<T>(x.shape(), v);
}

template <class T>
Tensor<T> rand_uniform(Rng& rng, const Shape& s, T lo, T hi) {
  Tensor<T> out(s);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

template <class T>
Tensor<T> rand_normal(Rng& rng, const Shape& s, T stddev = T(1)) {
  Tensor<T> out(s);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(rng.normal() * stddev);
  return out;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace rwsa
