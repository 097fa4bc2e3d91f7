#include "corrosion/autograd.hpp"

#include <memory>

#include "corrosion/error.hpp"
#include "corrosion/kernels.hpp"

namespace corrosion {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.grad = Tensor(node.value.shape());
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardRule rule) {
  Node node;
  node.value = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw Error(ErrorCode::kInvalidArgument, "input not on tape");
    node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.rule = std::move(rule);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error(ErrorCode::kInvalidArgument, "loss is on another tape");
  const Tensor& lv = nodes_.at(loss.id()).value;
  if (lv.numel() != 1) {
    throw Error(ErrorCode::kNonScalarLoss,
                "backward needs a scalar loss, got shape " + shape_string(lv.shape()));
  }
  last_visits_ = 0;
  if (!nodes_[loss.id()].requires_grad) return;

  std::vector<Tensor> grads(loss.id() + 1);
  grads[loss.id()] = Tensor(lv.shape(), 1.0f);
  std::vector<Tensor*> input_grads;

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || grads[id].numel() == 0) continue;
    ++last_visits_;
    if (node.inputs.empty()) {
      float* dst = node.grad.raw();
      const float* src = grads[id].raw();
      for (std::size_t i = 0; i < node.grad.numel(); ++i) dst[i] += src[i];
      continue;
    }
    input_grads.clear();
    for (auto in : node.inputs) {
      if (!nodes_[in].requires_grad) {
        input_grads.push_back(nullptr);
        continue;
      }
      if (grads[in].numel() == 0) grads[in] = Tensor(nodes_[in].value.shape());
      input_grads.push_back(&grads[in]);
    }
    node.rule(*this, grads[id], input_grads);
    grads[id] = Tensor();  // intermediate gradients are not retained
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_)
    if (n.requires_grad && n.inputs.empty()) n.grad.fill(0.0f);
}

namespace ops {
namespace {

void add_into(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  float* d = dst->raw();
  const float* s = src.raw();
  for (std::size_t i = 0; i < src.numel(); ++i) d[i] += s[i];
}

Tape& same_tape(std::initializer_list<Var> vars) {
  Tape* t = vars.begin()->tape();
  for (const auto& v : vars)
    if (v.tape() != t || !t) throw Error(ErrorCode::kInvalidArgument, "vars on different tapes");
  return *t;
}

}  // namespace

Var conv2d(Var input, Var weight, Var bias) {
  Tape& tape = same_tape({input, weight, bias});
  Tensor out = kernels::conv2d_forward(input.value(), weight.value(), bias.value());
  const std::size_t in_id = input.id(), w_id = weight.id();
  return tape.record(std::move(out), {input.id(), weight.id(), bias.id()},
                     [in_id, w_id](const Tape& t, const Tensor& g, std::span<Tensor* const> dst) {
                       auto grads = kernels::conv2d_backward(t.value(in_id), t.value(w_id), g,
                                                             dst[0] != nullptr);
                       if (dst[0]) add_into(dst[0], grads.input);
                       add_into(dst[1], grads.weight);
                       add_into(dst[2], grads.bias);
                     });
}

Var relu(Var input) {
  Tape& tape = same_tape({input});
  const std::size_t in_id = input.id();
  return tape.record(kernels::relu_forward(input.value()), {in_id},
                     [in_id](const Tape& t, const Tensor& g, std::span<Tensor* const> dst) {
                       add_into(dst[0], kernels::relu_backward(t.value(in_id), g));
                     });
}

Var maxpool2x2(Var input) {
  Tape& tape = same_tape({input});
  auto r = kernels::maxpool2x2_forward(input.value());
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(std::move(r.argmax));
  Shape in_shape = input.value().shape();
  return tape.record(std::move(r.output), {input.id()},
                     [argmax, in_shape](const Tape&, const Tensor& g, std::span<Tensor* const> dst) {
                       add_into(dst[0], kernels::maxpool2x2_backward(in_shape, *argmax, g));
                     });
}

Var global_avg_pool(Var input) {
  Tape& tape = same_tape({input});
  Shape in_shape = input.value().shape();
  return tape.record(kernels::global_avg_pool_forward(input.value()), {input.id()},
                     [in_shape](const Tape&, const Tensor& g, std::span<Tensor* const> dst) {
                       add_into(dst[0], kernels::global_avg_pool_backward(in_shape, g));
                     });
}

Var linear(Var input, Var weight, Var bias) {
  Tape& tape = same_tape({input, weight, bias});
  const std::size_t in_id = input.id(), w_id = weight.id();
  return tape.record(kernels::linear_forward(input.value(), weight.value(), bias.value()),
                     {input.id(), weight.id(), bias.id()},
                     [in_id, w_id](const Tape& t, const Tensor& g, std::span<Tensor* const> dst) {
                       auto grads = kernels::linear_backward(t.value(in_id), t.value(w_id), g);
                       add_into(dst[0], grads.input);
                       add_into(dst[1], grads.weight);
                       add_into(dst[2], grads.bias);
                     });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Tape& tape = same_tape({logits});
  auto r = kernels::softmax_cross_entropy_forward(logits.value(), labels);
  auto probs = std::make_shared<Tensor>(std::move(r.probs));
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  return tape.record(Tensor({}, r.loss), {logits.id()},
                     [probs, lab](const Tape&, const Tensor& g, std::span<Tensor* const> dst) {
                       add_into(dst[0], kernels::softmax_cross_entropy_backward(*probs, *lab, g[0]));
                     });
}

Var sum(Var input) {
  Tape& tape = same_tape({input});
  float s = 0.0f;
  for (float v : input.value().data()) s += v;
  Shape in_shape = input.value().shape();
  return tape.record(Tensor({}, s), {input.id()},
                     [in_shape](const Tape&, const Tensor& g, std::span<Tensor* const> dst) {
                       add_into(dst[0], Tensor(in_shape, g[0]));
                     });
}

}  // namespace ops
}  // namespace corrosion
