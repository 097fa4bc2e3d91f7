#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "corrosion/autograd.hpp"
#include "corrosion/tensor.hpp"

namespace corrosion {

// Class indices. The lower index wins argmax ties.
enum class Label : int { kNoCorrosion = 0, kCorrosion = 1 };

constexpr int label_index(Label l) { return static_cast<int>(l); }
const char* label_name(Label l);

inline constexpr std::size_t kNumBlocks = 5;

struct ModelConfig {
  std::size_t input_size = 64;
  std::array<std::size_t, kNumBlocks> channels = {16, 32, 64, 128, 256};
  std::size_t input_channels = 3;
  std::size_t num_classes = 2;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Parameters in a fixed order: conv1..conv5 (weight, bias) then fc (weight, bias).
struct ModelWeights {
  std::vector<NamedTensor> tensors;

  std::size_t parameter_count() const;
  const Tensor& get(const std::string& name) const;
  bool bit_equal(const ModelWeights& other) const;
};

// Names and shapes implied by a config, in storage order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

// Kaiming-uniform initialisation. Weights are drawn in layout order from
// std::mt19937_64 seeded with `seed`: each value consumes one 64-bit output,
// whose top 24 bits give u in [0,1), and the weight is b * (2u - 1) with
// b = sqrt(6 / fan_in). Biases are zero.
ModelWeights build_model(const ModelConfig& config, std::uint64_t seed);

float kaiming_uniform_bound(std::size_t fan_in);

// Inference: [N,3,S,S] -> logits [N,2]. No tape is recorded.
Tensor forward(const ModelConfig& config, const ModelWeights& weights, const Tensor& batch);

// Training-time forward on a tape. `params` are leaves in layout order.
Var forward(const ModelConfig& config, std::span<const Var> params, Var batch);

struct Prediction {
  Label label = Label::kNoCorrosion;
  float confidence = 0.5f;  // max softmax probability
};

Prediction prediction_from_logits(std::span<const float> logits);
Prediction predict(const ModelConfig& config, const ModelWeights& weights, const Tensor& image);

// ---- .cdw weight files ----------------------------------------------------
//
//   "CDW1"
//   u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
//               prod(dims) x f32 values (row-major)
//   u32 CRC-32 (IEEE) of every byte after the magic
//
// All integers and floats little-endian.

std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights);
ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes);
// Also checks names and shapes against the layout implied by `config`.
ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes, const ModelConfig& config);

void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig& config);

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes);

}  // namespace corrosion
