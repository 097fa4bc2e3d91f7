#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace corrosion {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of 32-bit reals. Plain value type: copies are deep,
// gradient bookkeeping lives on the Tape (see autograd.hpp).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  float* raw() noexcept { return data_.data(); }
  const float* raw() const noexcept { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // 4-d accessor for [N,C,H,W] tensors.
  float& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  float at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  void fill(float value);
  bool all_finite() const;

  // Reinterprets the buffer with a new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  // Rows [begin, end) along axis 0.
  Tensor slice0(std::size_t begin, std::size_t end) const;

  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Bitwise equality of shape and payload (distinguishes -0.0 from 0.0).
bool bit_equal(const Tensor& a, const Tensor& b);

// Concatenates tensors along axis 0; trailing dims must agree.
Tensor concat0(std::span<const Tensor> parts);

void require_shape(const Tensor& t, const Shape& expected, const char* what);

}  // namespace corrosion
