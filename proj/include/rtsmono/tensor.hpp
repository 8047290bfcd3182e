#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rtsmono {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised for every shape or precondition violation inside the numeric core.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major n-dimensional array. Plain value type: copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel(shape_)), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const {
    return shape_.at(static_cast<std::size_t>(axis < 0 ? axis + rank() : axis));
  }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(std::initializer_list<std::int64_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::int64_t> idx) const { return data_[offset(idx)]; }

  /// Scalar value of a single-element tensor.
  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    Tensor out(std::move(shape), data_);
    return out;
  }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t offset(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw ShapeError("index rank " + std::to_string(idx.size()) + " vs tensor " +
                       shape_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      if (i < 0 || i >= shape_[axis]) {
        throw ShapeError("index " + std::to_string(i) + " out of range on axis " +
                         std::to_string(axis) + " of " + shape_string(shape_));
      }
      off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace rtsmono
