#include <chrono>
#include <cstdio>
#include <random>

#include "corrosion/trainer.hpp"

using namespace corrosion;

int main() {
  ModelConfig cfg;
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<LabeledImage> data(64);
  for (auto& d : data) {
    d.pixels = Tensor({3, 64, 64});
    for (auto& v : d.pixels.data()) v = u(rng);
    d.label = u(rng) > 0.5 ? Label::kCorrosion : Label::kNoCorrosion;
  }
  SessionSpec spec;
  spec.epochs = 1;
  spec.validate_each_epoch = false;
  auto t0 = std::chrono::steady_clock::now();
  auto r = run_session(cfg, data, {}, spec);
  double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("train: %.2f ms/image (loss %.4f)\n", 1000 * dt / data.size(), r.report.epoch_losses[0]);
  t0 = std::chrono::steady_clock::now();
  evaluate(cfg, r.weights, data);
  dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("eval: %.2f ms/image\n", 1000 * dt / data.size());
}
