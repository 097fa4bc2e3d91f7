#include "corrosion/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "corrosion/error.hpp"

namespace corrosion::kernels {

namespace {

constexpr std::size_t kK = 3;

[[noreturn]] void shape_error(const std::string& msg) {
  throw Error(ErrorCode::kShapeMismatch, msg);
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    shape_error(std::string(what) + ": expected rank " + std::to_string(rank) +
                ", got shape " + shape_string(t.shape()));
  }
}

}  // namespace

void check_conv2d_shapes(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_rank(bias, 1, "conv2d bias");
  if (weight.dim(2) != kK || weight.dim(3) != kK) {
    shape_error("conv2d weight: kernel must be 3x3, got " + shape_string(weight.shape()));
  }
  if (weight.dim(1) != input.dim(1)) {
    shape_error("conv2d: C_in mismatch, input has " + std::to_string(input.dim(1)) +
                " channels but weight dim 1 is " + std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != weight.dim(0)) {
    shape_error("conv2d: C_out mismatch, weight dim 0 is " + std::to_string(weight.dim(0)) +
                " but bias has " + std::to_string(bias.dim(0)));
  }
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  check_conv2d_shapes(input, weight, bias);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t O = weight.dim(0);

  // wt[c][i][j][o]
  std::vector<float> wt(C * kK * kK * O);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < kK * kK; ++k) wt[(c * 9 + k) * O + o] = weight[(o * C + c) * 9 + k];

  Tensor out({N, O, H, W});
  std::vector<float> acc(O);
  const float* in = input.raw();
  const float* b = bias.raw();
  float* dst = out.raw();
  const std::size_t plane = H * W;

  for (std::size_t n = 0; n < N; ++n) {
    const float* in_n = in + n * C * plane;
    float* out_n = dst + n * O * plane;
    for (std::size_t y = 0; y < H; ++y) {
      const std::size_t i_lo = y == 0 ? 1 : 0;
      const std::size_t i_hi = y + 1 == H ? 2 : 3;
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t j_lo = x == 0 ? 1 : 0;
        const std::size_t j_hi = x + 1 == W ? 2 : 3;
        std::copy(b, b + O, acc.begin());
        float* a = acc.data();
        for (std::size_t c = 0; c < C; ++c) {
          const float* in_c = in_n + c * plane;
          for (std::size_t i = i_lo; i < i_hi; ++i) {
            const float* row = in_c + (y + i - 1) * W;
            for (std::size_t j = j_lo; j < j_hi; ++j) {
              const float v = row[x + j - 1];
              const float* wr = wt.data() + (c * 9 + i * 3 + j) * O;
              for (std::size_t o = 0; o < O; ++o) a[o] += v * wr[o];
            }
          }
        }
        float* px = out_n + y * W + x;
        for (std::size_t o = 0; o < O; ++o) px[o * plane] = a[o];
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& out_grad, bool need_input_grad) {
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t O = weight.dim(0);
  require_shape(out_grad, {N, O, H, W}, "conv2d out_grad");
  const std::size_t plane = H * W;
  const float* in = input.raw();
  const float* g = out_grad.raw();

  Conv2dGrads grads;

  // Output gradient in [n][y][x][o] layout, so weight/bias updates vectorize over o.
  std::vector<double> gt(N * plane * O);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t p = 0; p < plane; ++p)
        gt[(n * plane + p) * O + o] = g[(n * O + o) * plane + p];

  grads.bias = Tensor({O});
  {
    std::vector<double> db(O, 0.0);
    for (std::size_t np = 0; np < N * plane; ++np) {
      const double* gr = gt.data() + np * O;
      for (std::size_t o = 0; o < O; ++o) db[o] += gr[o];
    }
    for (std::size_t o = 0; o < O; ++o) grads.bias[o] = static_cast<float>(db[o]);
  }

  {
    std::vector<double> acc(C * 9 * O, 0.0);  // [c][i][j][o]
    for (std::size_t c = 0; c < C; ++c) {
      double* acc_c = acc.data() + c * 9 * O;
      for (std::size_t n = 0; n < N; ++n) {
        const float* in_c = in + (n * C + c) * plane;
        for (std::size_t y = 0; y < H; ++y) {
          const std::size_t i_lo = y == 0 ? 1 : 0;
          const std::size_t i_hi = y + 1 == H ? 2 : 3;
          for (std::size_t x = 0; x < W; ++x) {
            const std::size_t j_lo = x == 0 ? 1 : 0;
            const std::size_t j_hi = x + 1 == W ? 2 : 3;
            const double* gr = gt.data() + (n * plane + y * W + x) * O;
            for (std::size_t i = i_lo; i < i_hi; ++i) {
              const float* row = in_c + (y + i - 1) * W;
              for (std::size_t j = j_lo; j < j_hi; ++j) {
                const double v = row[x + j - 1];
                double* a = acc_c + (i * 3 + j) * O;
                for (std::size_t o = 0; o < O; ++o) a[o] += v * gr[o];
              }
            }
          }
        }
      }
    }
    grads.weight = Tensor({O, C, kK, kK});
    float* dw = grads.weight.raw();
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < 9; ++k) dw[(o * C + c) * 9 + k] = static_cast<float>(acc[(c * 9 + k) * O + o]);
  }

  if (need_input_grad) {
    // wt[o][i][j][c]
    std::vector<double> wt(O * 9 * C);
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < 9; ++k) wt[(o * 9 + k) * C + c] = weight[(o * C + c) * 9 + k];

    grads.input = Tensor({N, C, H, W});
    float* din = grads.input.raw();
    std::vector<double> acc(C);
    for (std::size_t n = 0; n < N; ++n) {
      const float* g_n = g + n * O * plane;
      for (std::size_t y = 0; y < H; ++y) {
        // Output row y - i + 1 must lie in [0, H).
        const std::size_t i_lo = y + 1 == H ? 1 : 0;
        const std::size_t i_hi = y == 0 ? 2 : 3;
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t j_lo = x + 1 == W ? 1 : 0;
          const std::size_t j_hi = x == 0 ? 2 : 3;
          std::fill(acc.begin(), acc.end(), 0.0);
          double* a = acc.data();
          for (std::size_t o = 0; o < O; ++o) {
            const float* g_o = g_n + o * plane;
            for (std::size_t i = i_lo; i < i_hi; ++i) {
              const float* row = g_o + (y + 1 - i) * W;
              for (std::size_t j = j_lo; j < j_hi; ++j) {
                const double v = row[x + 1 - j];
                const double* wr = wt.data() + (o * 9 + i * 3 + j) * C;
                for (std::size_t c = 0; c < C; ++c) a[c] += v * wr[c];
              }
            }
          }
          float* px = din + n * C * plane + y * W + x;
          for (std::size_t c = 0; c < C; ++c) px[c * plane] = static_cast<float>(a[c]);
        }
      }
    }
  }
  return grads;
}

Tensor conv2d_forward_reference(const Tensor& input, const Tensor& weight,
                                const Tensor& bias) {
  check_conv2d_shapes(input, weight, bias);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t O = weight.dim(0);
  Tensor out({N, O, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          float acc = bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < 3; ++i)
              for (std::size_t j = 0; j < 3; ++j) {
                const long yy = static_cast<long>(y + i) - 1;
                const long xx = static_cast<long>(x + j) - 1;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W))
                  continue;
                acc += input.at(n, c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) *
                       weight.at(o, c, i, j);
              }
          out.at(n, o, y, x) = acc;
        }
  return out;
}

Conv2dGrads conv2d_backward_reference(const Tensor& input, const Tensor& weight,
                                      const Tensor& out_grad, bool need_input_grad) {
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t O = weight.dim(0);
  require_shape(out_grad, {N, O, H, W}, "conv2d out_grad");
  const auto in_bounds = [&](long yy, long xx) {
    return yy >= 0 && xx >= 0 && yy < static_cast<long>(H) && xx < static_cast<long>(W);
  };

  Conv2dGrads grads;
  grads.bias = Tensor({O});
  for (std::size_t o = 0; o < O; ++o) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) acc += out_grad.at(n, o, y, x);
    grads.bias[o] = static_cast<float>(acc);
  }

  grads.weight = Tensor({O, C, 3, 3});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          double acc = 0.0;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t y = 0; y < H; ++y)
              for (std::size_t x = 0; x < W; ++x) {
                const long yy = static_cast<long>(y + i) - 1;
                const long xx = static_cast<long>(x + j) - 1;
                if (!in_bounds(yy, xx)) continue;
                acc += static_cast<double>(input.at(n, c, static_cast<std::size_t>(yy),
                                                    static_cast<std::size_t>(xx))) *
                       out_grad.at(n, o, y, x);
              }
          grads.weight.at(o, c, i, j) = static_cast<float>(acc);
        }

  if (need_input_grad) {
    grads.input = Tensor({N, C, H, W});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (std::size_t o = 0; o < O; ++o)
              for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j) {
                  const long yy = static_cast<long>(y) - static_cast<long>(i) + 1;
                  const long xx = static_cast<long>(x) - static_cast<long>(j) + 1;
                  if (!in_bounds(yy, xx)) continue;
                  acc += static_cast<double>(out_grad.at(n, o, static_cast<std::size_t>(yy),
                                                         static_cast<std::size_t>(xx))) *
                         weight.at(o, c, i, j);
                }
            grads.input.at(n, c, y, x) = static_cast<float>(acc);
          }
  }
  return grads;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  const float* src = input.raw();
  float* dst = out.raw();
  for (std::size_t i = 0; i < input.numel(); ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& out_grad) {
  require_shape(out_grad, input.shape(), "relu out_grad");
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) g[i] = input[i] > 0.0f ? out_grad[i] : 0.0f;
  return g;
}

MaxPoolResult maxpool2x2_forward(const Tensor& input) {
  require_rank(input, 4, "maxpool2x2 input");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw Error(ErrorCode::kOddSpatialSize,
                "maxpool2x2 needs even H and W, got " + shape_string(input.shape()));
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  MaxPoolResult r{Tensor({N, C, Ho, Wo}), std::vector<std::uint32_t>(N * C * Ho * Wo)};
  const float* src = input.raw();
  std::size_t k = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t base = nc * H * W;
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x, ++k) {
        std::size_t best = base + 2 * y * W + 2 * x;
        const std::size_t taps[3] = {best + 1, best + W, best + W + 1};
        for (std::size_t t : taps)
          if (src[t] > src[best]) best = t;
        r.output[k] = src[best];
        r.argmax[k] = static_cast<std::uint32_t>(best);
      }
  }
  return r;
}

Tensor maxpool2x2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                           const Tensor& out_grad) {
  if (argmax.size() != out_grad.numel()) shape_error("maxpool2x2 backward: argmax size");
  Tensor g(input_shape);
  for (std::size_t k = 0; k < argmax.size(); ++k) g[argmax[k]] += out_grad[k];
  return g;
}

Tensor global_avg_pool_forward(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool input");
  const std::size_t N = input.dim(0), C = input.dim(1), plane = input.dim(2) * input.dim(3);
  Tensor out({N, C});
  const float denom = static_cast<float>(plane);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    float s = 0.0f;
    const float* p = input.raw() + nc * plane;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    out[nc] = s / denom;
  }
  return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& out_grad) {
  const std::size_t N = input_shape.at(0), C = input_shape.at(1);
  const std::size_t plane = input_shape.at(2) * input_shape.at(3);
  require_shape(out_grad, {N, C}, "global_avg_pool out_grad");
  Tensor g(input_shape);
  const float denom = static_cast<float>(plane);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const float v = out_grad[nc] / denom;
    std::fill_n(g.raw() + nc * plane, plane, v);
  }
  return g;
}

Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  require_rank(bias, 1, "linear bias");
  const std::size_t N = input.dim(0), F = input.dim(1), O = weight.dim(0);
  if (weight.dim(1) != F) {
    shape_error("linear: feature mismatch, input has " + std::to_string(F) +
                " features but weight dim 1 is " + std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != O) {
    shape_error("linear: output mismatch, weight dim 0 is " + std::to_string(O) +
                " but bias has " + std::to_string(bias.dim(0)));
  }
  Tensor out({N, O});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o) {
      float acc = bias[o];
      const float* xr = input.raw() + n * F;
      const float* wr = weight.raw() + o * F;
      for (std::size_t f = 0; f < F; ++f) acc += xr[f] * wr[f];
      out[n * O + o] = acc;
    }
  return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& out_grad) {
  const std::size_t N = input.dim(0), F = input.dim(1), O = weight.dim(0);
  require_shape(out_grad, {N, O}, "linear out_grad");
  std::vector<double> gi(N * F, 0.0), gw(O * F, 0.0), gb(O, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o) {
      const double go = out_grad[n * O + o];
      gb[o] += go;
      for (std::size_t f = 0; f < F; ++f) {
        gw[o * F + f] += go * input[n * F + f];
        gi[n * F + f] += go * weight[o * F + f];
      }
    }
  const auto narrow = [](const std::vector<double>& v, Shape shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
    return t;
  };
  return {narrow(gi, {N, F}), narrow(gw, {O, F}), narrow(gb, {O})};
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  Tensor p({N, K});
  for (std::size_t n = 0; n < N; ++n) {
    const float* l = logits.raw() + n * K;
    const float m = *std::max_element(l, l + K);
    float s = 0.0f;
    for (std::size_t k = 0; k < K; ++k) {
      p[n * K + k] = std::exp(l[k] - m);
      s += p[n * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) p[n * K + k] /= s;
  }
  return p;
}

CrossEntropyResult softmax_cross_entropy_forward(const Tensor& logits,
                                                 std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N) {
    shape_error("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                std::to_string(N));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= K) {
      throw Error(ErrorCode::kLabelOutOfRange,
                  "label " + std::to_string(label) + " outside [0," + std::to_string(K) + ")");
    }
  }
  CrossEntropyResult r{0.0f, softmax(logits)};
  float total = 0.0f;
  for (std::size_t n = 0; n < N; ++n) {
    const float* l = logits.raw() + n * K;
    const float m = *std::max_element(l, l + K);
    float s = 0.0f;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(l[k] - m);
    total += std::log(s) - (l[static_cast<std::size_t>(labels[n])] - m);
  }
  r.loss = total / static_cast<float>(N);
  return r;
}

Tensor softmax_cross_entropy_backward(const Tensor& probs, std::span<const int> labels,
                                      float upstream) {
  const std::size_t N = probs.dim(0), K = probs.dim(1);
  Tensor g({N, K});
  const float scale = upstream / static_cast<float>(N);
  for (std::size_t n = 0; n < N; ++n) {
    const std::size_t y = static_cast<std::size_t>(labels[n]);
    // p_y - 1 written as -(sum of the other classes), which does not cancel.
    double rest = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      if (k == y) continue;
      rest += probs[n * K + k];
      g[n * K + k] = probs[n * K + k] * scale;
    }
    g[n * K + y] = -static_cast<float>(rest) * scale;
  }
  return g;
}

}  // namespace corrosion::kernels
