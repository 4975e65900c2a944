/**
 * Copyright 2026 The tripletml Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tml/error.hpp"

namespace tml {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Dense row-major n-dimensional array. Every dimension is positive and
/// the flat buffer always holds exactly product(shape) elements.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Scalar> data() noexcept { return data_; }
  std::span<const Scalar> data() const noexcept { return data_; }
  const std::vector<Scalar>& values() const noexcept { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  Scalar& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const Scalar& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  Scalar& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const Scalar& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Row-major matrix view; rows * cols must equal size().
  MatrixMap<Scalar> matrix(std::size_t rows, std::size_t cols) {
    check_view(rows, cols);
    return MatrixMap<Scalar>(data_.data(), Eigen::Index(rows), Eigen::Index(cols));
  }
  ConstMatrixMap<Scalar> matrix(std::size_t rows, std::size_t cols) const {
    check_view(rows, cols);
    return ConstMatrixMap<Scalar>(data_.data(), Eigen::Index(rows), Eigen::Index(cols));
  }
  /// First axis as rows, everything else flattened into columns.
  MatrixMap<Scalar> matrix() { return matrix(shape_.at(0), size() / shape_.at(0)); }
  ConstMatrixMap<Scalar> matrix() const { return matrix(shape_.at(0), size() / shape_.at(0)); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename To>
  Tensor<To> cast() const {
    std::vector<To> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](Scalar v) { return static_cast<To>(v); });
    return Tensor<To>(shape_, std::move(out));
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
    }
  }
  void check_view(std::size_t rows, std::size_t cols) const {
    if (rows * cols != size()) {
      throw DimensionError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " does not cover tensor " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](Scalar v) { return std::isfinite(double(v)); });
}

/// Copies rows [begin, end) of the first axis.
template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& t, std::size_t begin, std::size_t end) {
  if (begin >= end || end > t.dim(0)) throw DimensionError("row slice out of range");
  const std::size_t stride = t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  std::vector<Scalar> data(t.data().begin() + long(begin * stride), t.data().begin() + long(end * stride));
  return Tensor<Scalar>(std::move(shape), std::move(data));
}

/// Stacks tensors along the first axis; trailing dims must agree.
template <typename Scalar>
Tensor<Scalar> concat_rows(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows needs at least one tensor");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  std::vector<Scalar> data;
  for (const auto& p : parts) {
    if (!std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1, shape.end())) {
      throw DimensionError("concat_rows shape mismatch: " + shape_string(shape) + " vs " +
                           shape_string(p.shape()));
    }
    rows += p.dim(0);
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  shape[0] = rows;
  return Tensor<Scalar>(std::move(shape), std::move(data));
}

}  // namespace tml
