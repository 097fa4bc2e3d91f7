#include "corrosion/model.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "corrosion/error.hpp"
#include "corrosion/kernels.hpp"

namespace corrosion {

const char* label_name(Label l) {
  return l == Label::kCorrosion ? "corrosion" : "no_corrosion";
}

void ModelConfig::validate() const {
  if (input_size == 0 || input_size % (std::size_t{1} << kNumBlocks) != 0) {
    throw Error(ErrorCode::kInvalidConfig,
                "input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  }
  for (auto c : channels)
    if (c == 0) throw Error(ErrorCode::kInvalidConfig, "channel widths must be positive");
  if (input_channels == 0) throw Error(ErrorCode::kInvalidConfig, "input_channels must be positive");
  if (num_classes != 2) throw Error(ErrorCode::kInvalidConfig, "num_classes must be 2");
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.numel();
  return n;
}

const Tensor& ModelWeights::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw Error(ErrorCode::kInvalidArgument, "no parameter named " + name);
}

bool ModelWeights::bit_equal(const ModelWeights& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != other.tensors[i].name) return false;
    if (!corrosion::bit_equal(tensors[i].value, other.tensors[i].value)) return false;
  }
  return true;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config) {
  config.validate();
  std::vector<std::pair<std::string, Shape>> layout;
  std::size_t in = config.input_channels;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    const std::string prefix = "conv" + std::to_string(b + 1);
    layout.emplace_back(prefix + ".weight", Shape{config.channels[b], in, 3, 3});
    layout.emplace_back(prefix + ".bias", Shape{config.channels[b]});
    in = config.channels[b];
  }
  layout.emplace_back("fc.weight", Shape{config.num_classes, in});
  layout.emplace_back("fc.bias", Shape{config.num_classes});
  return layout;
}

float kaiming_uniform_bound(std::size_t fan_in) {
  return static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
}

ModelWeights build_model(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelWeights w;
  for (auto& [name, shape] : parameter_layout(config)) {
    Tensor t(shape);
    if (shape.size() > 1) {
      const std::size_t fan_in = t.numel() / shape[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : t.data()) {
        const double u = static_cast<double>(rng() >> 40) * 0x1.0p-24;
        v = static_cast<float>(bound * (2.0 * u - 1.0));
      }
    }
    w.tensors.push_back({name, std::move(t)});
  }
  return w;
}

namespace {

void check_batch(const ModelConfig& config, const Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(1) != config.input_channels ||
      batch.dim(2) != config.input_size || batch.dim(3) != config.input_size) {
    throw Error(ErrorCode::kShapeMismatch,
                "model input must be [N," + std::to_string(config.input_channels) + "," +
                    std::to_string(config.input_size) + "," + std::to_string(config.input_size) +
                    "], got " + shape_string(batch.shape()));
  }
}

void check_weights(const ModelConfig& config, const ModelWeights& weights) {
  auto layout = parameter_layout(config);
  if (weights.tensors.size() != layout.size()) {
    throw Error(ErrorCode::kWeightShapeMismatch, "expected " + std::to_string(layout.size()) +
                                                     " parameter tensors, got " +
                                                     std::to_string(weights.tensors.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = weights.tensors[i];
    if (t.name != layout[i].first || t.value.shape() != layout[i].second) {
      throw Error(ErrorCode::kWeightShapeMismatch,
                  "parameter " + std::to_string(i) + ": expected " + layout[i].first +
                      shape_string(layout[i].second) + ", got " + t.name +
                      shape_string(t.value.shape()));
    }
  }
}

}  // namespace

Tensor forward(const ModelConfig& config, const ModelWeights& weights, const Tensor& batch) {
  check_batch(config, batch);
  check_weights(config, weights);
  Tensor x = batch;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    x = kernels::conv2d_forward(x, weights.tensors[2 * b].value, weights.tensors[2 * b + 1].value);
    x = kernels::relu_forward(x);
    x = kernels::maxpool2x2_forward(x).output;
  }
  x = kernels::global_avg_pool_forward(x);
  return kernels::linear_forward(x, weights.tensors[2 * kNumBlocks].value,
                                 weights.tensors[2 * kNumBlocks + 1].value);
}

Var forward(const ModelConfig& config, std::span<const Var> params, Var batch) {
  check_batch(config, batch.value());
  if (params.size() != 2 * kNumBlocks + 2) {
    throw Error(ErrorCode::kWeightShapeMismatch, "wrong number of parameter vars");
  }
  Var x = batch;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    x = ops::maxpool2x2(ops::relu(ops::conv2d(x, params[2 * b], params[2 * b + 1])));
  }
  return ops::linear(ops::global_avg_pool(x), params[2 * kNumBlocks], params[2 * kNumBlocks + 1]);
}

Prediction prediction_from_logits(std::span<const float> logits) {
  if (logits.size() != 2) throw Error(ErrorCode::kShapeMismatch, "expected two logits");
  Tensor p = kernels::softmax(Tensor({1, 2}, std::vector<float>(logits.begin(), logits.end())));
  Prediction pred;
  if (p[1] > p[0]) {
    pred.label = Label::kCorrosion;
    pred.confidence = p[1];
  } else {
    pred.label = Label::kNoCorrosion;
    pred.confidence = p[0];
  }
  return pred;
}

Prediction predict(const ModelConfig& config, const ModelWeights& weights, const Tensor& image) {
  if (image.rank() != 3) {
    throw Error(ErrorCode::kShapeMismatch,
                "predict expects a [3,S,S] image, got " + shape_string(image.shape()));
  }
  Shape s{1, image.dim(0), image.dim(1), image.dim(2)};
  Tensor logits = forward(config, weights, image.reshaped(s));
  return prediction_from_logits(logits.data());
}

// ---- serialization ----

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks to stay within range.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

constexpr char kMagicPrefix[3] = {'C', 'D', 'W'};
constexpr char kVersion = '1';

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    auto b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
  void need(std::size_t n) const {
    if (buf.size() - pos < n) throw Error(ErrorCode::kTruncated, "weight file truncated");
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights) {
  Writer w;
  w.bytes(kMagicPrefix, 3);
  w.u8(static_cast<std::uint8_t>(kVersion));
  w.u32(static_cast<std::uint32_t>(weights.tensors.size()));
  for (const auto& t : weights.tensors) {
    if (t.name.size() > 0xFFFF) throw Error(ErrorCode::kInvalidArgument, "tensor name too long");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.value.data()) w.f32(v);
  }
  const std::uint32_t crc = crc32_ieee(std::span(w.out).subspan(4));
  w.u32(crc);
  return std::move(w.out);
}

ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagicPrefix, 3) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a .cdw weight file");
  }
  if (bytes[3] != static_cast<std::uint8_t>(kVersion)) {
    throw Error(ErrorCode::kUnknownVersion,
                std::string("unsupported weight format version '") +
                    static_cast<char>(bytes[3]) + "'");
  }
  if (bytes.size() < 12) throw Error(ErrorCode::kTruncated, "weight file truncated");
  const auto body = bytes.subspan(4, bytes.size() - 8);
  Reader tail(bytes.subspan(bytes.size() - 4));
  const std::uint32_t stored = tail.u32();
  if (crc32_ieee(body) != stored) {
    throw Error(ErrorCode::kChecksumMismatch, "weight file checksum mismatch");
  }

  Reader r(body);
  const std::uint32_t count = r.u32();
  ModelWeights w;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw Error(ErrorCode::kWeightShapeMismatch, "zero dimension in " + t.name);
      numel *= d;
      if (numel > body.size()) throw Error(ErrorCode::kTruncated, "weight file truncated");
    }
    r.need(numel * 4);
    std::vector<float> values(numel);
    for (auto& v : values) v = r.f32();
    t.value = Tensor(std::move(shape), std::move(values));
    w.tensors.push_back(std::move(t));
  }
  if (r.pos != body.size()) throw Error(ErrorCode::kTruncated, "trailing bytes in weight file");
  return w;
}

ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes, const ModelConfig& config) {
  ModelWeights w = deserialize_weights(bytes);
  check_weights(config, w);
  return w;
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(weights);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error(ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {
std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}
}  // namespace

ModelWeights load_weights(const std::filesystem::path& path) {
  return deserialize_weights(read_file(path));
}

ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig& config) {
  return deserialize_weights(read_file(path), config);
}

}  // namespace corrosion
