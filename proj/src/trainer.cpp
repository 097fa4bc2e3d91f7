#include "corrosion/trainer.hpp"

#include <chrono>
#include <cstring>
#include <numeric>
#include <sstream>

#include "corrosion/autograd.hpp"
#include "corrosion/rng.hpp"

namespace corrosion {

OptimizerState OptimizerState::for_weights(const ModelWeights& weights, AdamHyper hyper) {
  OptimizerState s;
  s.hyper = hyper;
  for (const auto& t : weights.tensors) {
    s.m.emplace_back(t.value.shape());
    s.v.emplace_back(t.value.shape());
  }
  return s;
}

void adam_step(ModelWeights& weights, std::span<const Tensor> grads, OptimizerState& state,
               double lr_multiplier) {
  if (grads.size() != weights.tensors.size() || state.m.size() != weights.tensors.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adam_step: parameter and gradient counts differ");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    require_shape(grads[k], weights.tensors[k].value.shape(), "adam_step gradient");
  }
  ++state.step;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    adam_update<float>(weights.tensors[k].value.data(), grads[k].data(), state.m[k].data(),
                       state.v[k].data(), state.step, state.hyper, lr_multiplier);
  }
}

double lr_schedule(std::size_t epoch) {
  if (epoch < 10) return 1.0;
  if (epoch < 20) return 0.1;
  return 0.01;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  Rng rng(mix_seed(seed, epoch));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

Tensor make_batch(std::span<const LabeledImage> data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(ErrorCode::kEmptyDataset, "empty batch");
  const Shape& s = data[indices[0]].pixels.shape();
  const std::size_t each = data[indices[0]].pixels.numel();
  Tensor batch({indices.size(), s.at(0), s.at(1), s.at(2)});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Tensor& p = data[indices[k]].pixels;
    require_shape(p, s, "batch image");
    std::memcpy(batch.raw() + k * each, p.raw(), each * sizeof(float));
  }
  return batch;
}

SessionResult run_session(const ModelConfig& config, std::span<const LabeledImage> dataset,
                          std::span<const LabeledImage> validation, const SessionSpec& spec) {
  if (dataset.empty()) throw Error(ErrorCode::kEmptyDataset, "training dataset is empty");
  if (spec.epochs == 0 || spec.batch_size == 0) {
    throw Error(ErrorCode::kInvalidArgument, "epochs and batch_size must be positive");
  }
  const auto start = std::chrono::steady_clock::now();

  SessionResult result{spec.resume_from ? *spec.resume_from : build_model(config, spec.seed), {}};
  ModelWeights& weights = result.weights;
  SessionReport& report = result.report;
  report.dataset_size = dataset.size();
  OptimizerState opt = OptimizerState::for_weights(weights, spec.hyper);

  std::vector<int> labels;
  std::vector<Tensor> grads(weights.tensors.size());
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    const double lr_mult = spec.lr_decay ? lr_schedule(epoch) : 1.0;
    const auto order = epoch_order(dataset.size(), spec.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += spec.batch_size) {
      const std::size_t end = std::min(order.size(), begin + spec.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      if (spec.on_batch) spec.on_batch(epoch, idx);

      labels.clear();
      for (auto i : idx) labels.push_back(label_index(dataset[i].label));

      Tape tape;
      std::vector<Var> params;
      params.reserve(weights.tensors.size());
      for (const auto& t : weights.tensors) params.push_back(tape.leaf(t.value, true));
      Var input = tape.leaf(make_batch(dataset, idx), false);
      Var loss = ops::softmax_cross_entropy(forward(config, params, input), labels);
      const float lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "non-finite training loss " << lv << " at epoch " << epoch << ", batch starting at "
            << begin << " (step " << opt.step << ")";
        throw Error(ErrorCode::kNonFiniteLoss, msg.str());
      }
      tape.backward(loss);
      for (std::size_t k = 0; k < params.size(); ++k) grads[k] = params[k].grad();
      adam_step(weights, grads, opt, lr_mult);
      loss_sum += static_cast<double>(lv) * static_cast<double>(idx.size());
      ++report.optimizer_steps;
    }
    report.epoch_losses.push_back(loss_sum / static_cast<double>(dataset.size()));
    if (spec.validate_each_epoch && !validation.empty()) {
      report.epoch_val_accuracy.push_back(evaluate(config, weights, validation));
    }
  }

  if (!validation.empty()) {
    report.final_val_accuracy = !report.epoch_val_accuracy.empty()
                                    ? report.epoch_val_accuracy.back()
                                    : evaluate(config, weights, validation);
  }
  report.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

double evaluate(const ModelConfig& config, const ModelWeights& weights,
                std::span<const LabeledImage> validation) {
  if (validation.empty()) throw Error(ErrorCode::kEmptyDataset, "validation set is empty");
  constexpr std::size_t kChunk = 32;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < validation.size(); begin += kChunk) {
    const std::size_t end = std::min(validation.size(), begin + kChunk);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    Tensor logits = forward(config, weights, make_batch(validation, idx));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto p = prediction_from_logits(logits.data().subspan(2 * k, 2));
      if (p.label == validation[idx[k]].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(validation.size());
}

}  // namespace corrosion
