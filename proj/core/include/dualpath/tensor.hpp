// Copyright 2026 The dualpath Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dualpath/error.hpp"

namespace dualpath {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape);

// Dense row-major array. Most of the library uses rank-2 tensors (a single
// row vector is 1 x n); scalars are 1 x 1.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
    return Tensor(Shape{rows, cols}, fill);
  }

  // Row-major nested initializer, e.g. Tensor<double>::from_rows({{1, 2}, {3, 4}}).
  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows);

  static Tensor scalar(T v) { return Tensor(Shape{1, 1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors. A rank-1 tensor is treated as a single row.
  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::span<const T> row(std::size_t r) const { return span().subspan(r * cols(), cols()); }
  std::span<T> row(std::size_t r) { return span().subspan(r * cols(), cols()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  const std::vector<T>& values() const { return data_; }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    if (data_.empty() && shape_.empty()) return Tensor<U>();
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> Tensor<T>::from_rows(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<T> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

}  // namespace dualpath
