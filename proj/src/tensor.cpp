#include "corrosion/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "corrosion/error.hpp"

namespace corrosion {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) {
      throw Error(ErrorCode::kShapeMismatch,
                  "tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "shape " + shape_string(shape_) + " needs " +
                    std::to_string(shape_numel(shape_)) + " values, got " +
                    std::to_string(data_.size()));
  }
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor Tensor::slice0(std::size_t begin, std::size_t end) const {
  if (rank() == 0 || begin >= end || end > shape_[0]) {
    throw Error(ErrorCode::kInvalidArgument, "slice0 out of range");
  }
  const std::size_t row = numel() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  std::vector<float> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                       data_.begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(s), std::move(d));
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape_ == b.shape_ && a.data_ == b.data_;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.raw(), b.raw(), a.numel() * sizeof(float)) == 0;
}

Tensor concat0(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorCode::kInvalidArgument, "concat0 of nothing");
  Shape s = parts.front().shape();
  std::size_t rows = 0;
  std::vector<float> d;
  for (const auto& p : parts) {
    if (p.rank() != s.size() || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1)) {
      throw Error(ErrorCode::kShapeMismatch, "concat0 trailing dims differ: " +
                                                 shape_string(s) + " vs " +
                                                 shape_string(p.shape()));
    }
    rows += p.shape()[0];
    d.insert(d.end(), p.data().begin(), p.data().end());
  }
  s[0] = rows;
  return Tensor(std::move(s), std::move(d));
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": expected shape " +
                                               shape_string(expected) + ", got " +
                                               shape_string(t.shape()));
  }
}

}  // namespace corrosion
