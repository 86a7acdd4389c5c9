// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdlib>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bipete/errors.hpp"

namespace bipete::num {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Precision { f32, f64 };

/// Reads BIPETE_PRECISION (f32|f64); f32 when unset.
Precision precision_from_env();
std::string_view precision_name(Precision p);

/// Dense row-major tensor. Immutable after construction: copies share storage.
template <typename T>
class Tensor {
 public:
  Tensor() : data_(std::make_shared<const std::vector<T>>()) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != data.size()) {
      throw ShapeError("tensor " + shape_str(shape_) + " given " + std::to_string(data.size()) +
                       " values");
    }
    data_ = std::make_shared<const std::vector<T>>(std::move(data));
  }

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T{0}); }

  static Tensor filled(Shape shape, T value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_->size(); }
  std::span<const T> data() const noexcept { return {data_->data(), data_->size()}; }
  const std::vector<T>& vec() const noexcept { return *data_; }
  T operator[](std::size_t i) const { return (*data_)[i]; }

  T at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch for " + shape_str(shape_));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      if (i >= shape_[axis]) throw RangeError("index out of bounds for " + shape_str(shape_));
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return (*data_)[flat];
  }

  /// Same storage viewed with another shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_->begin(), data_->end()));
  }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
};

}  // namespace bipete::num
