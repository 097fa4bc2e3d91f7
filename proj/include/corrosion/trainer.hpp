#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "corrosion/error.hpp"
#include "corrosion/model.hpp"

namespace corrosion {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update on a flat parameter buffer. `step` is the 1-based step
// count after incrementing. Instantiated for float (training) and double
// (scalar reference checks).
template <typename T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
                 std::uint64_t step, const AdamHyper& hp, double lr_multiplier = 1.0) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adam: buffer sizes differ");
  }
  const T b1 = static_cast<T>(hp.beta1);
  const T b2 = static_cast<T>(hp.beta2);
  const T one_b1 = static_cast<T>(1.0 - hp.beta1);
  const T one_b2 = static_cast<T>(1.0 - hp.beta2);
  const T corr1 = static_cast<T>(1.0 - std::pow(hp.beta1, static_cast<double>(step)));
  const T corr2 = static_cast<T>(1.0 - std::pow(hp.beta2, static_cast<double>(step)));
  const T lr = static_cast<T>(hp.lr * lr_multiplier);
  const T eps = static_cast<T>(hp.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    m[i] = b1 * m[i] + one_b1 * g;
    v[i] = b2 * v[i] + one_b2 * g * g;
    const T m_hat = m[i] / corr1;
    const T v_hat = v[i] / corr2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

struct OptimizerState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Tensor> m;  // mirrors parameter shapes
  std::vector<Tensor> v;

  static OptimizerState for_weights(const ModelWeights& weights, AdamHyper hyper = {});
};

// Increments state.step, then applies adam_update to every tensor.
void adam_step(ModelWeights& weights, std::span<const Tensor> grads, OptimizerState& state,
               double lr_multiplier = 1.0);

// Step decay: 1.0 for epochs 0-9, 0.1 for 10-19, 0.01 from 20 on.
double lr_schedule(std::size_t epoch);

struct LabeledImage {
  Tensor pixels;  // [3,S,S], values in [0,1]
  Label label = Label::kNoCorrosion;
};

struct SessionSpec {
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::optional<ModelWeights> resume_from;
  AdamHyper hyper;
  bool validate_each_epoch = true;
  // false holds the learning rate at hyper.lr for every epoch.
  bool lr_decay = true;
  // Called with the dataset indices of every minibatch, in order.
  std::function<void(std::size_t epoch, std::span<const std::size_t> indices)> on_batch;
};

struct SessionReport {
  std::vector<double> epoch_losses;          // mean training loss per epoch
  std::vector<double> epoch_val_accuracy;    // when validate_each_epoch
  double final_val_accuracy = 0.0;
  double duration_seconds = 0.0;
  std::size_t dataset_size = 0;
  std::size_t optimizer_steps = 0;
};

struct SessionResult {
  ModelWeights weights;
  SessionReport report;
};

// Deterministic permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

// Stacks images [3,S,S] (by index) into a batch [N,3,S,S].
Tensor make_batch(std::span<const LabeledImage> data, std::span<const std::size_t> indices);

SessionResult run_session(const ModelConfig& config, std::span<const LabeledImage> dataset,
                          std::span<const LabeledImage> validation, const SessionSpec& spec);

// Fraction of images whose predicted class equals the stored label.
double evaluate(const ModelConfig& config, const ModelWeights& weights,
                std::span<const LabeledImage> validation);

}  // namespace corrosion
