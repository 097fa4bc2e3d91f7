#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include "corrosion/error.hpp"
#include "corrosion/rng.hpp"
#include "corrosion/synthetic.hpp"
#include "corrosion/tensor.hpp"
#include "corrosion/trainer.hpp"

namespace testutil {

inline corrosion::Tensor random_tensor(const corrosion::Shape& shape, std::uint64_t seed,
                                       double lo = -1.0, double hi = 1.0) {
  corrosion::Rng rng(seed);
  corrosion::Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Alternating positive/negative synthetic scenes as model inputs.
inline std::vector<corrosion::LabeledImage> synthetic_set(std::size_t n, std::uint64_t seed,
                                                          std::size_t size = 64) {
  std::vector<corrosion::LabeledImage> out;
  for (std::size_t i = 0; i < n; ++i) {
    corrosion::SyntheticSpec spec;
    spec.seed = corrosion::mix_seed(seed, i);
    spec.image_size = size;
    spec.kind = i % 2 ? corrosion::SceneKind::kPositive : corrosion::SceneKind::kNegative;
    const auto img = corrosion::generate_image(spec);
    out.push_back({corrosion::to_model_input(img.image, size), img.truth});
  }
  return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("corrosion-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

template <typename F>
corrosion::ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const corrosion::Error& e) {
    return e.code();
  }
  FAIL("expected a corrosion::Error");
  return corrosion::ErrorCode::kInvalidArgument;
}

}  // namespace testutil
