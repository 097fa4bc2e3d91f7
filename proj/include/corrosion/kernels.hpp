#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "corrosion/tensor.hpp"

// Forward and backward kernels for the layer types of the classifier.
//
// Convolutions are fixed to 3x3 kernels, stride 1, zero padding 1. The
// `*_reference` functions are direct loop nests and define the exact
// floating-point accumulation order; the fast variants reorder loops so the
// innermost loop runs across channels but keep, for every output element, the
// same sequence of additions. The two are bit-identical (see test_kernels).
//
// Accumulation orders (terms whose input tap falls in the padding are skipped).
// The forward pass accumulates in float; the gradient sums accumulate in
// double and are rounded to float once at the end.
//   forward  out[n,o,y,x] = bias[o] + sum over (c, i, j)
//   d input  din[n,c,y,x] = 0 + sum over (o, i, j)
//   d weight dw[o,c,i,j] = 0 + sum over (n, y, x)
//   d bias   db[o]       = 0 + sum over (n, y, x)
namespace corrosion::kernels {

struct Conv2dGrads {
  Tensor input;  // empty when not requested
  Tensor weight;
  Tensor bias;
};

void check_conv2d_shapes(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& out_grad, bool need_input_grad);

Tensor conv2d_forward_reference(const Tensor& input, const Tensor& weight,
                                const Tensor& bias);
Conv2dGrads conv2d_backward_reference(const Tensor& input, const Tensor& weight,
                                      const Tensor& out_grad, bool need_input_grad);

Tensor relu_forward(const Tensor& input);
// Gradient passes where input > 0; zero elsewhere, including exactly 0.
Tensor relu_backward(const Tensor& input, const Tensor& out_grad);

struct MaxPoolResult {
  Tensor output;
  // Flat index into the input of each output element's winning tap.
  std::vector<std::uint32_t> argmax;
};

// 2x2 window, stride 2. Ties go to the first maximal tap in row-major order.
MaxPoolResult maxpool2x2_forward(const Tensor& input);
Tensor maxpool2x2_backward(const Shape& input_shape,
                           std::span<const std::uint32_t> argmax,
                           const Tensor& out_grad);

Tensor global_avg_pool_forward(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& out_grad);

Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);
struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
LinearGrads linear_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& out_grad);

// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);

struct CrossEntropyResult {
  float loss = 0.0f;  // batch mean
  Tensor probs;       // softmax of logits, kept for backward
};
CrossEntropyResult softmax_cross_entropy_forward(const Tensor& logits,
                                                 std::span<const int> labels);
// d loss / d logits = (softmax - onehot) / N, scaled by the upstream scalar.
Tensor softmax_cross_entropy_backward(const Tensor& probs, std::span<const int> labels,
                                      float upstream);

}  // namespace corrosion::kernels
