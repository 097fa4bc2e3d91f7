#include <doctest.h>

#include "corrosion/synthetic.hpp"
#include "test_util.hpp"

using namespace corrosion;

namespace {

bool in_rust_band(const std::uint8_t* px, const SyntheticSpec& spec) {
  const Hsv h = rgb_to_hsv(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
  return h.h >= spec.rust_hue_lo - 4 && h.h <= spec.rust_hue_hi + 4 && h.s >= spec.rust_sat_lo - 0.1;
}

// Independent classifier: rust if enough pixels fall in the rust hue band.
Label hue_threshold(const RgbImage& img, const SyntheticSpec& spec) {
  std::size_t n = 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) n += in_rust_band(img.px(x, y), spec);
  return n >= img.width * img.height / 100 ? Label::kCorrosion : Label::kNoCorrosion;
}

}  // namespace

TEST_CASE("HSV conversion round-trips") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double r = rng.uniform(), g = rng.uniform(), b = rng.uniform();
    double r2, g2, b2;
    hsv_to_rgb(rgb_to_hsv(r, g, b), &r2, &g2, &b2);
    CHECK(r2 == doctest::Approx(r).epsilon(1e-9));
    CHECK(g2 == doctest::Approx(g).epsilon(1e-9));
    CHECK(b2 == doctest::Approx(b).epsilon(1e-9));
  }
  const Hsv red = rgb_to_hsv(1, 0, 0);
  CHECK(red.h == 0.0);
  CHECK(red.s == 1.0);
  CHECK(rgb_to_hsv(0, 1, 0).h == doctest::Approx(120.0));
}

TEST_CASE("generation is a pure function of its inputs") {
  for (auto kind : {SceneKind::kNegative, SceneKind::kPositive, SceneKind::kAmbiguous}) {
    SyntheticSpec spec;
    spec.seed = 99;
    spec.kind = kind;
    const auto a = generate_image(spec);
    const auto b = generate_image(spec);
    CHECK(a.image == b.image);
    spec.seed = 100;
    CHECK_FALSE(generate_image(spec).image == a.image);
    CHECK(a.image.width == 64);
    CHECK(a.kind == kind);
  }
}

TEST_CASE("truth follows the scene kind") {
  SyntheticSpec spec;
  spec.kind = SceneKind::kPositive;
  CHECK(generate_image(spec).truth == Label::kCorrosion);
  spec.kind = SceneKind::kAmbiguous;
  CHECK(generate_image(spec).truth == Label::kNoCorrosion);
  spec.kind = SceneKind::kNegative;
  CHECK(generate_image(spec).truth == Label::kNoCorrosion);
}

TEST_CASE("positives carry a rust patch covering at least 3%") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    SyntheticSpec spec;
    spec.seed = s;
    spec.kind = SceneKind::kPositive;
    const auto img = generate_image(spec);
    CHECK(img.largest_patch_coverage >= 0.03);
    bool any = false;
    for (std::size_t i = 0; i < 64 * 64 && !any; ++i) any = in_rust_band(img.image.rgb.data() + 3 * i, spec);
    CHECK(any);
  }
}

TEST_CASE("a hue threshold separates the classes") {
  std::size_t correct = 0;
  const std::size_t n = 1000;
  for (std::uint64_t s = 0; s < n; ++s) {
    SyntheticSpec spec;
    spec.seed = mix_seed(7, s);
    spec.kind = s % 3 == 0 ? SceneKind::kPositive : (s % 3 == 1 ? SceneKind::kNegative : SceneKind::kAmbiguous);
    const auto img = generate_image(spec);
    correct += hue_threshold(img.image, spec) == img.truth;
  }
  MESSAGE("hue threshold accuracy " << double(correct) / n);
  CHECK(double(correct) / n > 0.95);
}

TEST_CASE("other image sizes work") {
  SyntheticSpec spec;
  spec.image_size = 32;
  spec.kind = SceneKind::kPositive;
  const auto img = generate_image(spec);
  CHECK(img.image.width == 32);
  CHECK(img.image.height == 32);
  CHECK(img.largest_patch_coverage >= 0.03);
}
