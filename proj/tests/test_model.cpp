#include <doctest.h>

#include <cmath>
#include <random>

#include "corrosion/model.hpp"
#include "test_util.hpp"

using namespace corrosion;
using testutil::error_code_of;
using testutil::random_tensor;

namespace {

// Walks the network shapes independently of parameter_layout.
std::size_t walked_parameter_count(std::size_t input_size, std::array<std::size_t, 5> widths) {
  std::size_t total = 0, in = 3, side = input_size;
  for (auto out : widths) {
    total += out * in * 3 * 3 + out;
    in = out;
    side /= 2;
  }
  CHECK(side == input_size / 32);
  return total + 2 * in + 2;
}

}  // namespace

TEST_CASE("Kaiming bound") {
  CHECK(kaiming_uniform_bound(6) == 1.0f);
  CHECK(kaiming_uniform_bound(27) == doctest::Approx(0.4714045).epsilon(1e-6));
}

TEST_CASE("initial weights follow the documented generator") {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.channels = {2, 3, 2, 2, 2};
  const ModelWeights w = build_model(cfg, 42);
  std::mt19937_64 gen(42);
  for (const auto& nt : w.tensors) {
    if (nt.value.rank() == 1) {
      for (float b : nt.value.data()) CHECK(b == 0.0f);
      continue;
    }
    const double bound = std::sqrt(6.0 / double(nt.value.numel() / nt.value.dim(0)));
    for (float v : nt.value.data()) {
      const double u = double(gen() >> 40) / 16777216.0;
      CHECK(v == static_cast<float>(bound * (2.0 * u - 1.0)));
    }
  }
}

TEST_CASE("conv1 weights have uniform moments") {
  // 3704 filters x 27 taps = 100,008 samples at fan_in 27.
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.channels = {3704, 1, 1, 1, 1};
  const ModelWeights w = build_model(cfg, 2018);
  const Tensor& t = w.get("conv1.weight");
  REQUIRE(t.numel() >= 100000);
  const double b = std::sqrt(6.0 / 27.0);
  double mean = 0.0;
  for (float v : t.data()) {
    CHECK(std::fabs(v) <= b);
    mean += v;
  }
  mean /= double(t.numel());
  double var = 0.0;
  for (float v : t.data()) var += (v - mean) * (v - mean);
  var /= double(t.numel());
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::fabs(var - b * b / 3.0) < 0.05 * b * b / 3.0);
}

TEST_CASE("parameter count and layout match the shape walk") {
  const ModelConfig cfg;
  CHECK(walked_parameter_count(64, cfg.channels) == 393122);
  CHECK(build_model(cfg, 1).parameter_count() == 393122);
  const std::size_t per_layer[] = {448, 4640, 18496, 73856, 295168, 514};
  const auto layout = parameter_layout(cfg);
  REQUIRE(layout.size() == 12);
  for (std::size_t l = 0; l < 6; ++l)
    CHECK(shape_numel(layout[2 * l].second) + shape_numel(layout[2 * l + 1].second) == per_layer[l]);
  CHECK(layout[10].first == "fc.weight");
  CHECK(layout[10].second == Shape{2, 256});

  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    ModelConfig c;
    c.input_size = 32 * (1 + rng.below(3));
    for (auto& ch : c.channels) ch = 1 + rng.below(20);
    CHECK(build_model(c, s).parameter_count() == walked_parameter_count(c.input_size, c.channels));
  }
}

TEST_CASE("invalid configs are rejected") {
  ModelConfig c;
  c.input_size = 48;
  CHECK(error_code_of([&] { build_model(c, 1); }) == ErrorCode::kInvalidConfig);
  c = ModelConfig{};
  c.channels[2] = 0;
  CHECK(error_code_of([&] { build_model(c, 1); }) == ErrorCode::kInvalidConfig);
}

TEST_CASE("zero input with zero biases gives zero logits") {
  const ModelConfig cfg;
  const Tensor logits = forward(cfg, build_model(cfg, 3), Tensor({2, 3, 64, 64}));
  CHECK(logits.shape() == Shape{2, 2});
  for (float v : logits.data()) CHECK(v == 0.0f);
}

TEST_CASE("batched forward equals per-image forwards") {
  const ModelConfig cfg;
  const ModelWeights w = build_model(cfg, 4);
  const Tensor batch = random_tensor({3, 3, 64, 64}, 5, 0.0, 1.0);
  const Tensor all = forward(cfg, w, batch);
  for (std::size_t n = 0; n < 3; ++n) CHECK(bit_equal(forward(cfg, w, batch.slice0(n, n + 1)), all.slice0(n, n + 1)));
}

TEST_CASE("build_model is deterministic and seed-sensitive") {
  const ModelConfig cfg;
  CHECK(build_model(cfg, 9).bit_equal(build_model(cfg, 9)));
  CHECK_FALSE(build_model(cfg, 9).bit_equal(build_model(cfg, 10)));
}

TEST_CASE("wrong input size is an error") {
  const ModelConfig cfg;
  const ModelWeights w = build_model(cfg, 1);
  CHECK(error_code_of([&] { forward(cfg, w, Tensor({1, 3, 32, 32})); }) == ErrorCode::kShapeMismatch);
  CHECK(error_code_of([&] { forward(cfg, w, Tensor({1, 1, 64, 64})); }) == ErrorCode::kShapeMismatch);
  CHECK(error_code_of([&] { predict(cfg, w, Tensor({3, 32, 32})); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("prediction from logits") {
  const float a[] = {2.0f, 0.0f};
  const Prediction p = prediction_from_logits(a);
  CHECK(p.label == Label::kNoCorrosion);
  CHECK(p.confidence == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)).epsilon(1e-6));
  CHECK(p.confidence == doctest::Approx(0.8808).epsilon(1e-4));

  const float tie[] = {0.0f, 0.0f};
  CHECK(prediction_from_logits(tie).label == Label::kNoCorrosion);
  CHECK(prediction_from_logits(tie).confidence == 0.5f);

  const float pos[] = {-1.0f, 0.5f};
  CHECK(prediction_from_logits(pos).label == Label::kCorrosion);
}

TEST_CASE("argmax is invariant to a shared logit shift") {
  Rng rng(77);
  for (int i = 0; i < 200; ++i) {
    const float l0 = static_cast<float>(rng.uniform(-5, 5)), l1 = static_cast<float>(rng.uniform(-5, 5));
    const float shift = static_cast<float>(rng.uniform(-50, 50));
    const float a[] = {l0, l1};
    const float b[] = {l0 + shift, l1 + shift};
    // Skip pairs the shift rounds into a tie.
    if ((b[0] > b[1]) != (a[0] > a[1]) || (b[0] == b[1]) != (a[0] == a[1])) continue;
    CHECK(prediction_from_logits(a).label == prediction_from_logits(b).label);
  }
}

TEST_CASE("confidence lies in [0.5, 1]") {
  ModelConfig cfg;
  cfg.input_size = 32;
  const ModelWeights w = build_model(cfg, 6);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Prediction p = predict(cfg, w, random_tensor({3, 32, 32}, s, 0.0, 1.0));
    CHECK(p.confidence >= 0.5f);
    CHECK(p.confidence <= 1.0f);
  }
}
