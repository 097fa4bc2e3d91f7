#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "corrosion/tensor.hpp"

namespace corrosion {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Accumulated gradient; only populated on leaves created with requires_grad.
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the gradient of the node's output and adds contributions into the
// gradient buffers of its inputs. `input_grads[k]` is null when input k does
// not require a gradient.
using BackwardRule =
    std::function<void(const Tape&, const Tensor& out_grad, std::span<Tensor* const> input_grads)>;

// Records operations in execution order, which is a topological order by
// construction: a node can only reference nodes that already exist.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardRule rule);

  // Seeds d loss / d loss = 1 and propagates in reverse recording order. Leaf
  // gradients accumulate across calls until zero_grad().
  void backward(Var loss);
  void zero_grad();

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  // Nodes whose backward rule ran during the most recent backward().
  std::size_t last_backward_visits() const noexcept { return last_visits_; }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    Tensor grad;
  };
  std::vector<Node> nodes_;
  std::size_t last_visits_ = 0;
};

// Differentiable operations. All inputs must live on the same tape.
namespace ops {

Var conv2d(Var input, Var weight, Var bias);
Var relu(Var input);
Var maxpool2x2(Var input);
Var global_avg_pool(Var input);
Var linear(Var input, Var weight, Var bias);
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
Var sum(Var input);

}  // namespace ops

}  // namespace corrosion
