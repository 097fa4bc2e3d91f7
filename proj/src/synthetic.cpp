#include "corrosion/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace corrosion {

const char* scene_kind_name(SceneKind k) {
  switch (k) {
    case SceneKind::kNegative: return "negative";
    case SceneKind::kPositive: return "positive";
    case SceneKind::kAmbiguous: return "ambiguous";
  }
  return "unknown";
}

Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  Hsv out{0.0, mx > 0.0 ? d / mx : 0.0, mx};
  if (d > 0.0) {
    if (mx == r) {
      out.h = 60.0 * std::fmod((g - b) / d, 6.0);
    } else if (mx == g) {
      out.h = 60.0 * ((b - r) / d + 2.0);
    } else {
      out.h = 60.0 * ((r - g) / d + 4.0);
    }
    if (out.h < 0.0) out.h += 360.0;
  }
  return out;
}

void hsv_to_rgb(const Hsv& hsv, double* r, double* g, double* b) {
  const double c = hsv.v * hsv.s;
  const double hp = std::fmod(hsv.h, 360.0) / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double rr = 0, gg = 0, bb = 0;
  if (hp < 1) {
    rr = c, gg = x;
  } else if (hp < 2) {
    rr = x, gg = c;
  } else if (hp < 3) {
    gg = c, bb = x;
  } else if (hp < 4) {
    gg = x, bb = c;
  } else if (hp < 5) {
    rr = x, bb = c;
  } else {
    rr = c, bb = x;
  }
  const double m = hsv.v - c;
  *r = rr + m;
  *g = gg + m;
  *b = bb + m;
}

namespace {

struct Blob {
  double cx, cy, rx, ry, angle;
  double wobble, wobble_phase;
  int wobble_freq;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = (dx * ca + dy * sa) / rx;
    const double v = (-dx * sa + dy * ca) / ry;
    const double theta = std::atan2(v, u);
    const double edge = 1.0 + wobble * std::sin(wobble_freq * theta + wobble_phase);
    return u * u + v * v <= edge * edge;
  }
};

Blob random_blob(Rng& rng, double size, double r_lo, double r_hi) {
  Blob b;
  const double r = rng.uniform(r_lo, r_hi);
  const double aspect = rng.uniform(0.7, 1.4);
  b.rx = r * std::sqrt(aspect);
  b.ry = r / std::sqrt(aspect);
  b.cx = rng.uniform(0.15 * size, 0.85 * size);
  b.cy = rng.uniform(0.15 * size, 0.85 * size);
  b.angle = rng.uniform(0.0, 3.14159265358979);
  b.wobble = rng.uniform(0.05, 0.25);
  b.wobble_phase = rng.uniform(0.0, 6.2831853);
  b.wobble_freq = static_cast<int>(rng.range(3, 7));
  return b;
}

std::vector<std::uint8_t> rasterize(const Blob& b, std::size_t size) {
  std::vector<std::uint8_t> mask(size * size, 0);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      mask[y * size + x] = b.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
  return mask;
}

double coverage(const std::vector<std::uint8_t>& mask) {
  std::size_t n = 0;
  for (auto m : mask) n += m;
  return static_cast<double>(n) / static_cast<double>(mask.size());
}

}  // namespace

SyntheticImage generate_image(const SyntheticSpec& spec) {
  Rng rng(mix_seed(spec.seed, 0xC0DEu));
  const std::size_t S = spec.image_size;
  const double size = static_cast<double>(S);

  // Linear-light canvas in [0,1].
  std::vector<double> canvas(S * S * 3);
  auto put = [&](std::size_t x, std::size_t y, double r, double g, double b) {
    double* p = &canvas[(y * S + x) * 3];
    p[0] = r, p[1] = g, p[2] = b;
  };

  // Background: grey plate with a gentle gradient and a slight cool cast.
  const double base = rng.uniform(spec.gray_lo, spec.gray_hi) / 255.0;
  const double grad_x = rng.uniform(-0.12, 0.12);
  const double grad_y = rng.uniform(-0.12, 0.12);
  const double cool = rng.uniform(0.0, 0.03);
  Hsv tint{0.0, 0.0, 0.0};
  if (spec.kind == SceneKind::kAmbiguous) {
    tint.h = rng.uniform(spec.ambiguous_hue_lo, spec.ambiguous_hue_hi);
    tint.s = rng.uniform(spec.ambiguous_sat_lo, spec.ambiguous_sat_hi);
  }
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double v = std::clamp(
          base * (1.0 + grad_x * (static_cast<double>(x) / size - 0.5) +
                  grad_y * (static_cast<double>(y) / size - 0.5)),
          0.0, 1.0);
      if (spec.kind == SceneKind::kAmbiguous) {
        double r, g, b;
        hsv_to_rgb({tint.h, tint.s, v}, &r, &g, &b);
        put(x, y, r, g, b);
      } else {
        put(x, y, v * (1.0 - cool), v * (1.0 - cool / 2), v);
      }
    }

  // Paint marks in blue/green hues, never in the rust band.
  const int distractors = static_cast<int>(rng.range(0, spec.max_distractors));
  for (int d = 0; d < distractors; ++d) {
    Blob blob = random_blob(rng, size, 3.0, 8.0);
    const double hue = rng.bernoulli(0.5) ? rng.uniform(95.0, 150.0) : rng.uniform(190.0, 240.0);
    const Hsv c{hue, rng.uniform(0.3, 0.6), rng.uniform(0.4, 0.8)};
    double r, g, b;
    hsv_to_rgb(c, &r, &g, &b);
    const auto mask = rasterize(blob, S);
    for (std::size_t i = 0; i < S * S; ++i)
      if (mask[i]) put(i % S, i / S, r, g, b);
  }

  SyntheticImage out;
  out.kind = spec.kind;
  out.truth = spec.kind == SceneKind::kPositive ? Label::kCorrosion : Label::kNoCorrosion;

  if (spec.kind == SceneKind::kPositive) {
    const int patches = static_cast<int>(rng.range(spec.min_patches, spec.max_patches));
    const double min_r = std::sqrt(spec.min_patch_coverage * size * size / 3.14159265358979);
    for (int k = 0; k < patches; ++k) {
      Blob blob = k == 0 ? random_blob(rng, size, min_r * 1.15, min_r * 2.0)
                         : random_blob(rng, size, 0.1 * size, 0.2 * size);
      auto mask = rasterize(blob, S);
      if (k == 0) {
        while (coverage(mask) < spec.min_patch_coverage) {
          blob.rx *= 1.08;
          blob.ry *= 1.08;
          mask = rasterize(blob, S);
        }
        out.largest_patch_coverage = coverage(mask);
      }
      const Hsv c{rng.uniform(spec.rust_hue_lo, spec.rust_hue_hi),
                  rng.uniform(spec.rust_sat_lo, spec.rust_sat_hi),
                  rng.uniform(spec.rust_val_lo, spec.rust_val_hi)};
      for (std::size_t i = 0; i < S * S; ++i) {
        if (!mask[i]) continue;
        // Mottled oxide: jitter value and saturation per pixel, stay in band.
        const Hsv p{std::clamp(c.h + rng.uniform(-2.0, 2.0), spec.rust_hue_lo, spec.rust_hue_hi),
                    std::clamp(c.s + rng.uniform(-0.05, 0.05), spec.rust_sat_lo, spec.rust_sat_hi),
                    std::clamp(c.v + rng.uniform(-0.08, 0.08), spec.rust_val_lo, spec.rust_val_hi)};
        double r, g, b;
        hsv_to_rgb(p, &r, &g, &b);
        put(i % S, i / S, r, g, b);
      }
      out.largest_patch_coverage = std::max(out.largest_patch_coverage, coverage(mask));
    }
  }

  out.image = RgbImage(S, S);
  const double sigma = spec.noise_sigma / 255.0;
  for (std::size_t i = 0; i < S * S * 3; ++i) {
    const double v = canvas[i] + sigma * rng.normal();
    out.image.rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  return out;
}

}  // namespace corrosion
