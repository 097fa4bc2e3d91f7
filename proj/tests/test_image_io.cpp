#include <doctest.h>

#include <cstdio>
#include <jpeglib.h>

#include "corrosion/image_io.hpp"
#include "test_util.hpp"

using namespace corrosion;
using testutil::error_code_of;

namespace {

RgbImage gradient_image(std::size_t w, std::size_t h) {
  RgbImage img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto* p = img.px(x, y);
      p[0] = static_cast<std::uint8_t>(x * 255 / (w - 1));
      p[1] = static_cast<std::uint8_t>(y * 255 / (h - 1));
      p[2] = static_cast<std::uint8_t>((x + y) % 256);
    }
  return img;
}

std::vector<std::uint8_t> encode_jpeg(const RgbImage& img, int quality) {
  jpeg_compress_struct c;
  jpeg_error_mgr err;
  c.err = jpeg_std_error(&err);
  jpeg_create_compress(&c);
  unsigned char* buf = nullptr;
  unsigned long size = 0;
  jpeg_mem_dest(&c, &buf, &size);
  c.image_width = static_cast<JDIMENSION>(img.width);
  c.image_height = static_cast<JDIMENSION>(img.height);
  c.input_components = 3;
  c.in_color_space = JCS_RGB;
  jpeg_set_defaults(&c);
  jpeg_set_quality(&c, quality, TRUE);
  jpeg_start_compress(&c, TRUE);
  while (c.next_scanline < c.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(img.rgb.data() + c.next_scanline * img.width * 3);
    jpeg_write_scanlines(&c, &row, 1);
  }
  jpeg_finish_compress(&c);
  std::vector<std::uint8_t> out(buf, buf + size);
  jpeg_destroy_compress(&c);
  std::free(buf);
  return out;
}

}  // namespace

TEST_CASE("PNG round-trip is lossless") {
  const RgbImage img = gradient_image(37, 21);
  const auto bytes = encode_png(img);
  CHECK(detect_format(bytes) == ImageFormat::kPng);
  CHECK(std::string(format_extension(ImageFormat::kPng)) == "png");
  CHECK(decode_image(bytes) == img);
}

TEST_CASE("PPM round-trip is lossless") {
  const RgbImage img = gradient_image(5, 9);
  const auto bytes = encode_ppm(img);
  CHECK(detect_format(bytes) == ImageFormat::kPpm);
  CHECK(decode_image(bytes) == img);
}

TEST_CASE("JPEG decodes close to the source") {
  const RgbImage img = gradient_image(64, 48);
  const auto bytes = encode_jpeg(img, 95);
  CHECK(detect_format(bytes) == ImageFormat::kJpeg);
  CHECK(std::string(format_extension(ImageFormat::kJpeg)) == "jpg");
  const RgbImage back = decode_image(bytes);
  REQUIRE(back.width == 64);
  REQUIRE(back.height == 48);
  double err = 0;
  for (std::size_t i = 0; i < img.rgb.size(); ++i) err += std::abs(int(img.rgb[i]) - int(back.rgb[i]));
  CHECK(err / double(img.rgb.size()) < 4.0);
}

TEST_CASE("empty, unknown and truncated data are decode errors") {
  const std::vector<std::uint8_t> empty;
  CHECK(error_code_of([&] { decode_image(empty); }) == ErrorCode::kDecode);
  const std::vector<std::uint8_t> text{'h', 'e', 'l', 'l', 'o', ' ', 'w', 'o', 'r', 'l', 'd'};
  CHECK(error_code_of([&] { decode_image(text); }) == ErrorCode::kDecode);
  auto png = encode_png(gradient_image(16, 16));
  png.resize(png.size() / 2);
  CHECK(error_code_of([&] { decode_image(png); }) == ErrorCode::kDecode);
  auto jpg = encode_jpeg(gradient_image(16, 16), 80);
  const auto full = jpg;
  jpg.resize(40);
  CHECK(error_code_of([&] { decode_image(jpg); }) == ErrorCode::kDecode);
  jpg.assign(full.begin(), full.end() - full.size() / 3);
  CHECK(error_code_of([&] { decode_image(jpg); }) == ErrorCode::kDecode);
  const std::string bad_ppm = "P6\n4 4\n255\nabc";
  const std::vector<std::uint8_t> ppm(bad_ppm.begin(), bad_ppm.end());
  CHECK(error_code_of([&] { decode_image(ppm); }) == ErrorCode::kDecode);
}

TEST_CASE("model input is channels-first in [0,1]") {
  RgbImage img(2, 2);
  img.px(0, 0)[0] = 255;
  img.px(1, 1)[2] = 51;
  const Tensor t = to_model_input(img, 2);
  CHECK(t.shape() == Shape{3, 2, 2});
  CHECK(t[0] == 1.0f);
  CHECK(t[(2 * 2 + 1) * 2 + 1] == doctest::Approx(0.2));
  for (float v : t.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("resizing a constant image keeps the constant") {
  RgbImage img(100, 70);
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
    img.rgb[i] = 200;
    img.rgb[i + 1] = 100;
    img.rgb[i + 2] = 0;
  }
  const Tensor t = to_model_input(img, 64);
  for (std::size_t p = 0; p < 64 * 64; ++p) {
    CHECK(t[p] == doctest::Approx(200.0 / 255.0));
    CHECK(t[64 * 64 + p] == doctest::Approx(100.0 / 255.0));
    CHECK(t[2 * 64 * 64 + p] == 0.0f);
  }
}
