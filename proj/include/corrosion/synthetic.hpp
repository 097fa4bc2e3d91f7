#pragma once

#include <cstdint>

#include "corrosion/image_io.hpp"
#include "corrosion/model.hpp"
#include "corrosion/rng.hpp"

namespace corrosion {

// Negative: bare grey metal, possibly with non-rust paint marks.
// Positive: grey metal with 1-4 rust-coloured patches.
// Ambiguous: no patches but a desaturated warm cast over the whole plate, so
// the context suggests rust without any rust present. Ground truth negative.
enum class SceneKind { kNegative, kPositive, kAmbiguous };

const char* scene_kind_name(SceneKind k);

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  SceneKind kind = SceneKind::kNegative;

  int min_patches = 1;
  int max_patches = 4;
  double min_patch_coverage = 0.03;  // of image area, for the first patch

  // Rust band in HSV (hue in degrees).
  double rust_hue_lo = 12.0;
  double rust_hue_hi = 30.0;
  double rust_sat_lo = 0.55;
  double rust_sat_hi = 0.90;
  double rust_val_lo = 0.35;
  double rust_val_hi = 0.80;

  double gray_lo = 85.0;  // background level, 0-255
  double gray_hi = 185.0;
  double noise_sigma = 6.0;
  int max_distractors = 2;

  double ambiguous_hue_lo = 18.0;
  double ambiguous_hue_hi = 35.0;
  double ambiguous_sat_lo = 0.10;
  double ambiguous_sat_hi = 0.20;
};

struct SyntheticImage {
  RgbImage image;
  Label truth = Label::kNoCorrosion;
  SceneKind kind = SceneKind::kNegative;
  double largest_patch_coverage = 0.0;  // positive only
};

// Pure function of the SyntheticSpec.
SyntheticImage generate_image(const SyntheticSpec& spec);

// HSV with hue in degrees [0,360), s and v in [0,1].
struct Hsv {
  double h, s, v;
};
Hsv rgb_to_hsv(double r, double g, double b);  // inputs in [0,1]
void hsv_to_rgb(const Hsv& hsv, double* r, double* g, double* b);

}  // namespace corrosion
