#include "corrosion/image_io.hpp"

// clang-format off
#include <cstdio>
#include <csetjmp>
#include <png.h>
#include <jpeglib.h>
// clang-format on

#include <algorithm>
#include <cmath>
#include <cstring>

#include "corrosion/error.hpp"

namespace corrosion {

namespace {

[[noreturn]] void decode_error(const std::string& msg) { throw Error(ErrorCode::kDecode, msg); }

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    decode_error(std::string("png: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  if (img.width == 0 || img.height == 0 || img.width > 16384 || img.height > 16384) {
    png_image_free(&img);
    decode_error("png: unsupported dimensions");
  }
  RgbImage out(img.width, img.height);
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    decode_error("png: " + msg);
  }
  return out;
}

struct JpegErr {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_quiet(j_common_ptr) {}

// Returns false on failure; nothing with a destructor is live across setjmp.
bool decode_jpeg_raw(std::span<const std::uint8_t> bytes, RgbImage* out, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  err.mgr.output_message = jpeg_quiet;
  err.message[0] = '\0';
  if (setjmp(err.jump)) {
    std::memcpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  if (cinfo.output_width == 0 || cinfo.output_height == 0 || cinfo.output_width > 16384 ||
      cinfo.output_height > 16384 || cinfo.output_components != 3) {
    std::snprintf(message, JMSG_LENGTH_MAX, "unsupported jpeg layout");
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  out->width = cinfo.output_width;
  out->height = cinfo.output_height;
  out->rgb.resize(out->width * out->height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out->rgb.data() + cinfo.output_scanline * out->width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  // Truncated or corrupt data only raises warnings and is padded with grey.
  const bool damaged = err.mgr.num_warnings > 0;
  if (damaged) (*err.mgr.format_message)(reinterpret_cast<j_common_ptr>(&cinfo), message);
  jpeg_destroy_decompress(&cinfo);
  return !damaged;
}

RgbImage decode_jpeg(std::span<const std::uint8_t> bytes) {
  RgbImage out;
  char message[JMSG_LENGTH_MAX] = {0};
  if (!decode_jpeg_raw(bytes, &out, message)) decode_error(std::string("jpeg: ") + message);
  return out;
}

// Binary PPM (P6, maxval 255).
RgbImage decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_ws();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) && digits < 8) {
      v = v * 10 + (bytes[pos++] - '0');
      ++digits;
    }
    if (digits == 0) decode_error("ppm: malformed header");
    return v;
  };
  const std::size_t w = number(), h = number(), maxval = number();
  if (w == 0 || h == 0 || w > 16384 || h > 16384 || maxval != 255) {
    decode_error("ppm: unsupported header");
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) decode_error("ppm: malformed header");
  ++pos;
  if (bytes.size() - pos < w * h * 3) decode_error("ppm: truncated pixel data");
  RgbImage out(w, h);
  std::memcpy(out.rgb.data(), bytes.data() + pos, w * h * 3);
  return out;
}

}  // namespace

ImageFormat detect_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return ImageFormat::kPng;
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF)
    return ImageFormat::kJpeg;
  if (bytes.size() >= 3 && bytes[0] == 'P' && bytes[1] == '6' && std::isspace(bytes[2]))
    return ImageFormat::kPpm;
  decode_error(bytes.empty() ? "empty image payload" : "unrecognised image format");
}

const char* format_extension(ImageFormat f) {
  switch (f) {
    case ImageFormat::kPng: return "png";
    case ImageFormat::kJpeg: return "jpg";
    case ImageFormat::kPpm: return "ppm";
  }
  return "bin";
}

RgbImage decode_image(std::span<const std::uint8_t> bytes) {
  switch (detect_format(bytes)) {
    case ImageFormat::kPng: return decode_png(bytes);
    case ImageFormat::kJpeg: return decode_jpeg(bytes);
    case ImageFormat::kPpm: return decode_ppm(bytes);
  }
  decode_error("unreachable");
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIo, std::string("png encode: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIo, std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

Tensor to_model_input(const RgbImage& image, std::size_t size) {
  if (image.width == 0 || image.height == 0) decode_error("empty image");
  Tensor t({3, size, size});
  const double sx = static_cast<double>(image.width) / static_cast<double>(size);
  const double sy = static_cast<double>(image.height) / static_cast<double>(size);
  const auto clampi = [](double v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(hi)));
  };
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = std::max(0.0, (static_cast<double>(y) + 0.5) * sy - 0.5);
    const std::size_t y0 = clampi(std::floor(fy), image.height - 1);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = std::max(0.0, (static_cast<double>(x) + 0.5) * sx - 0.5);
      const std::size_t x0 = clampi(std::floor(fx), image.width - 1);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = image.px(x0, y0)[c] * (1 - wx) + image.px(x1, y0)[c] * wx;
        const double bot = image.px(x0, y1)[c] * (1 - wx) + image.px(x1, y1)[c] * wx;
        t[(c * size + y) * size + x] = static_cast<float>((top * (1 - wy) + bot * wy) / 255.0);
      }
    }
  }
  return t;
}

}  // namespace corrosion
