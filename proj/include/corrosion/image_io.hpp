#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "corrosion/tensor.hpp"

namespace corrosion {

// 8-bit interleaved RGB raster.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  std::uint8_t* px(std::size_t x, std::size_t y) { return rgb.data() + (y * width + x) * 3; }
  const std::uint8_t* px(std::size_t x, std::size_t y) const {
    return rgb.data() + (y * width + x) * 3;
  }
  bool operator==(const RgbImage&) const = default;
};

enum class ImageFormat { kPng, kJpeg, kPpm };

// Sniffs the signature; throws Error{kDecode} for anything else.
ImageFormat detect_format(std::span<const std::uint8_t> bytes);
const char* format_extension(ImageFormat f);

RgbImage decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const RgbImage& image);
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);

// Bilinear resize (pixel-centre aligned) to size x size, channels first,
// values scaled to [0,1].
Tensor to_model_input(const RgbImage& image, std::size_t size);

}  // namespace corrosion
