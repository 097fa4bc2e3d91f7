#include "corrosion/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "corrosion/autograd.hpp"
#include "corrosion/model.hpp"
#include "corrosion/rng.hpp"

namespace corrosion {

namespace {

// ---- double-precision reference ops -----------------------------------------

struct D {
  Shape shape;
  std::vector<double> v;
  std::size_t dim(std::size_t i) const { return shape[i]; }
};

D from_float(const Tensor& t) {
  D d{t.shape(), {}};
  d.v.assign(t.data().begin(), t.data().end());
  return d;
}

D conv_d(const D& in, const D& w, const D& b) {
  const std::size_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3), O = w.dim(0);
  D out{{N, O, H, W}, std::vector<double>(N * O * H * W)};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double acc = b.v[o];
          for (std::size_t c = 0; c < C; ++c)
            for (int i = 0; i < 3; ++i)
              for (int j = 0; j < 3; ++j) {
                const long yy = static_cast<long>(y) + i - 1, xx = static_cast<long>(x) + j - 1;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                acc += w.v[((o * C + c) * 3 + i) * 3 + j] *
                       in.v[((n * C + c) * H + yy) * W + xx];
              }
          out.v[((n * O + o) * H + y) * W + x] = acc;
        }
  return out;
}

D relu_d(const D& in, std::vector<int>* pattern) {
  D out = in;
  for (auto& x : out.v) {
    if (pattern) pattern->push_back(x > 0.0);
    x = x > 0.0 ? x : 0.0;
  }
  return out;
}

D maxpool_d(const D& in, std::vector<int>* pattern) {
  const std::size_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  D out{{N, C, H / 2, W / 2}, std::vector<double>(N * C * (H / 2) * (W / 2))};
  std::size_t k = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t y = 0; y < H / 2; ++y)
      for (std::size_t x = 0; x < W / 2; ++x) {
        double best = -INFINITY;
        int arg = 0;
        for (int t = 0; t < 4; ++t) {
          const double v = in.v[(nc * H + 2 * y + t / 2) * W + 2 * x + t % 2];
          if (v > best) best = v, arg = t;
        }
        if (pattern) pattern->push_back(arg);
        out.v[k++] = best;
      }
  return out;
}

D gap_d(const D& in) {
  const std::size_t N = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
  D out{{N, C}, std::vector<double>(N * C)};
  for (std::size_t i = 0; i < N * C; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < HW; ++p) s += in.v[i * HW + p];
    out.v[i] = s / static_cast<double>(HW);
  }
  return out;
}

D linear_d(const D& in, const D& w, const D& b) {
  const std::size_t N = in.dim(0), F = in.dim(1), O = w.dim(0);
  D out{{N, O}, std::vector<double>(N * O)};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o) {
      double acc = b.v[o];
      for (std::size_t f = 0; f < F; ++f) acc += in.v[n * F + f] * w.v[o * F + f];
      out.v[n * O + o] = acc;
    }
  return out;
}

double sce_d(const D& logits, const std::vector<int>& labels) {
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* row = &logits.v[n * K];
    const double mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    total += -(row[labels[n]] - mx - std::log(z));
  }
  return total / static_cast<double>(N);
}

double dot_d(const D& y, const std::vector<double>& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.v.size(); ++i) s += y.v[i] * c[i];
  return s;
}

// ---- harness -------------------------------------------------------------

using Oracle = std::function<double(const std::vector<D>&, std::vector<int>* pattern)>;
using Analytic = std::function<Var(Tape&, const std::vector<Var>&)>;

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (auto& x : t.data()) x = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Values bounded away from zero so a step of h never crosses the ReLU kink.
Tensor away_from_zero(const Shape& s, Rng& rng, double margin) {
  Tensor t(s);
  for (auto& x : t.data()) {
    const double m = rng.uniform(margin, 1.0);
    x = static_cast<float>(rng.bernoulli(0.5) ? m : -m);
  }
  return t;
}

// Distinct values on a grid of `gap`, shuffled, so no pooling window has a tie.
Tensor distinct_values(const Shape& s, Rng& rng, double gap) {
  Tensor t(s);
  std::vector<std::size_t> order(t.numel());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const double offset = static_cast<double>(t.numel()) / 2.0;
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>((static_cast<double>(order[i]) - offset) * gap);
  return t;
}

// Adds sum(c * y) to the tape so non-scalar ops get a generic upstream gradient.
Var weighted_sum(Tape& tape, Var y, const Tensor& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.numel(); ++i) s += static_cast<double>(c[i]) * y.value()[i];
  return tape.record(Tensor({}, static_cast<float>(s)), {y.id()},
                     [c](const Tape&, const Tensor& g, std::span<Tensor* const> dst) {
                       if (!dst[0]) return;
                       for (std::size_t i = 0; i < c.numel(); ++i) (*dst[0])[i] += c[i] * g[0];
                     });
}

std::vector<double> as_double(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::string shapes_string(const std::vector<Tensor>& inputs) {
  std::ostringstream s;
  for (std::size_t i = 0; i < inputs.size(); ++i) s << (i ? " " : "") << shape_string(inputs[i].shape());
  return s.str();
}

struct Harness {
  const GradcheckOptions& opt;

  GradcheckCase run(const std::string& op, std::uint64_t seed, const std::vector<Tensor>& inputs,
                    const std::vector<bool>& check, const Analytic& analytic, const Oracle& oracle,
                    std::size_t coords_per_tensor, Rng& rng, bool composite = false) const {
    GradcheckCase out;
    out.op = op;
    out.composite = composite;
    out.seed = seed;
    out.shape = shapes_string(inputs);

    Tape tape;
    std::vector<Var> vars;
    for (std::size_t k = 0; k < inputs.size(); ++k) vars.push_back(tape.leaf(inputs[k], check[k]));
    tape.backward(analytic(tape, vars));

    std::vector<D> base;
    for (const auto& t : inputs) base.push_back(from_float(t));

    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!check[k]) continue;
      const Tensor& g = vars[k].grad();
      std::vector<std::size_t> coords(inputs[k].numel());
      std::iota(coords.begin(), coords.end(), 0);
      if (coords_per_tensor && coords.size() > coords_per_tensor) {
        for (std::size_t i = 0; i < coords_per_tensor; ++i)
          std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
        coords.resize(coords_per_tensor);
      }
      for (auto i : coords) {
        std::vector<D> plus = base, minus = base;
        plus[k].v[i] += opt.h;
        minus[k].v[i] -= opt.h;
        std::vector<int> pp, pm;
        const double fp = oracle(plus, &pp);
        const double fm = oracle(minus, &pm);
        if (pp != pm) {
          ++out.skipped;
          continue;
        }
        const double numeric = (fp - fm) / (2.0 * opt.h);
        const double a = g[i];
        const double diff = std::fabs(a - numeric);
        const double mag = std::fabs(a) + std::fabs(numeric);
        if (mag < opt.abs_tol) {
          out.max_abs_error_tiny = std::max(out.max_abs_error_tiny, diff);
        } else {
          const double rel = diff / std::max(std::fabs(a), std::fabs(numeric));
          out.max_error = std::max(out.max_error, rel);
        }
        ++out.checked;
      }
    }
    const double tol = composite ? opt.composite_rel_tol : opt.rel_tol;
    out.passed = out.checked > 0 && out.max_error < tol && out.max_abs_error_tiny < opt.abs_tol;
    return out;
  }
};

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckOptions& opt) {
  std::vector<GradcheckCase> cases;
  const Harness h{opt};
  for (std::size_t s = 0; s < opt.seeds_per_op; ++s) {
    const std::uint64_t seed = mix_seed(opt.seed, s);
    Rng rng(seed);
    auto dim = [&](std::int64_t lo, std::int64_t hi) { return static_cast<std::size_t>(rng.range(lo, hi)); };
    // The first round uses fixed, documented shapes; later rounds draw them.
    const bool fixed = s == 0;

    {  // conv2d: input, weight and bias
      std::size_t N = 2, C = 3, O = 4, H = 8, W = 8;
      if (!fixed) N = dim(1, 2), C = dim(1, 4), O = dim(1, 4), H = dim(3, 7), W = dim(3, 7);
      std::vector<Tensor> in{random_tensor({N, C, H, W}, rng), random_tensor({O, C, 3, 3}, rng),
                             random_tensor({O}, rng)};
      const Tensor c = random_tensor({N, O, H, W}, rng);
      const auto cd = as_double(c);
      cases.push_back(h.run(
          "conv2d", seed, in, {true, true, true},
          [&](Tape& t, const std::vector<Var>& v) {
            return weighted_sum(t, ops::conv2d(v[0], v[1], v[2]), c);
          },
          [&](const std::vector<D>& x, std::vector<int>*) { return dot_d(conv_d(x[0], x[1], x[2]), cd); },
          0, rng));
    }
    {  // relu
      const Shape sh{dim(1, 2), dim(1, 3), dim(2, 5), dim(2, 5)};
      std::vector<Tensor> in{away_from_zero(sh, rng, 10 * opt.h)};
      const Tensor c = random_tensor(sh, rng);
      const auto cd = as_double(c);
      cases.push_back(h.run(
          "relu", seed, in, {true},
          [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::relu(v[0]), c); },
          [&](const std::vector<D>& x, std::vector<int>* p) { return dot_d(relu_d(x[0], p), cd); }, 0,
          rng));
    }
    {  // maxpool2x2
      std::size_t N = 1, C = 2, H = 6, W = 6;
      if (!fixed) N = dim(1, 2), C = dim(1, 3), H = 2 * dim(1, 3), W = 2 * dim(1, 3);
      std::vector<Tensor> in{distinct_values({N, C, H, W}, rng, 10 * opt.h)};
      const Tensor c = random_tensor({N, C, H / 2, W / 2}, rng);
      const auto cd = as_double(c);
      cases.push_back(h.run(
          "maxpool2x2", seed, in, {true},
          [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::maxpool2x2(v[0]), c); },
          [&](const std::vector<D>& x, std::vector<int>* p) { return dot_d(maxpool_d(x[0], p), cd); },
          0, rng));
    }
    {  // global average pool
      const std::size_t N = dim(1, 3), C = dim(1, 4);
      std::vector<Tensor> in{random_tensor({N, C, dim(1, 6), dim(1, 6)}, rng)};
      const Tensor c = random_tensor({N, C}, rng);
      const auto cd = as_double(c);
      cases.push_back(h.run(
          "global_avg_pool", seed, in, {true},
          [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::global_avg_pool(v[0]), c); },
          [&](const std::vector<D>& x, std::vector<int>*) { return dot_d(gap_d(x[0]), cd); }, 0, rng));
    }
    {  // linear
      std::size_t N = 4, F = 7, O = 2;
      if (!fixed) N = dim(1, 4), F = dim(1, 8), O = dim(1, 5);
      std::vector<Tensor> in{random_tensor({N, F}, rng), random_tensor({O, F}, rng), random_tensor({O}, rng)};
      const Tensor c = random_tensor({N, O}, rng);
      const auto cd = as_double(c);
      cases.push_back(h.run(
          "linear", seed, in, {true, true, true},
          [&](Tape& t, const std::vector<Var>& v) {
            return weighted_sum(t, ops::linear(v[0], v[1], v[2]), c);
          },
          [&](const std::vector<D>& x, std::vector<int>*) { return dot_d(linear_d(x[0], x[1], x[2]), cd); },
          0, rng));
    }
    {  // softmax cross-entropy
      std::size_t N = 4, K = 2;
      if (!fixed) N = dim(1, 5), K = dim(2, 4);
      std::vector<Tensor> in{random_tensor({N, K}, rng)};
      std::vector<int> labels(N);
      for (auto& l : labels) l = static_cast<int>(rng.below(K));
      cases.push_back(h.run(
          "softmax_cross_entropy", seed, in, {true},
          [&](Tape&, const std::vector<Var>& v) { return ops::softmax_cross_entropy(v[0], labels); },
          [&](const std::vector<D>& x, std::vector<int>*) { return sce_d(x[0], labels); }, 0, rng));
    }
    {  // sum
      std::vector<Tensor> in{random_tensor({dim(1, 3), dim(1, 5)}, rng)};
      cases.push_back(h.run(
          "sum", seed, in, {true}, [&](Tape&, const std::vector<Var>& v) { return ops::sum(v[0]); },
          [&](const std::vector<D>& x, std::vector<int>*) {
            return std::accumulate(x[0].v.begin(), x[0].v.end(), 0.0);
          },
          0, rng));
    }
    {  // whole network on a narrow config, every parameter tensor
      ModelConfig cfg;
      cfg.input_size = 32;
      cfg.channels = {3, 4, 3, 4, 3};
      const ModelWeights w = build_model(cfg, seed);
      std::vector<Tensor> in;
      for (const auto& nt : w.tensors) in.push_back(nt.value);
      // Nonzero biases so no unit sits at exactly zero.
      for (std::size_t k = 1; k < in.size(); k += 2)
        for (auto& b : in[k].data()) b = static_cast<float>(rng.uniform(-0.1, 0.1));
      const std::size_t N = 2;
      in.push_back(random_tensor({N, 3, 32, 32}, rng, 0.0, 1.0));
      std::vector<int> labels{0, 1};
      std::vector<bool> check(in.size(), true);
      const std::size_t P = w.tensors.size();
      cases.push_back(h.run(
          "network", seed, in, check,
          [&](Tape&, const std::vector<Var>& v) {
            std::vector<Var> params(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(P));
            return ops::softmax_cross_entropy(forward(cfg, params, v[P]), labels);
          },
          [&](const std::vector<D>& x, std::vector<int>* p) {
            D a = x[P];
            for (std::size_t b = 0; b < kNumBlocks; ++b)
              a = maxpool_d(relu_d(conv_d(a, x[2 * b], x[2 * b + 1]), p), p);
            return sce_d(linear_d(gap_d(a), x[2 * kNumBlocks], x[2 * kNumBlocks + 1]), labels);
          },
          opt.network_coords, rng, true));
    }
  }
  return cases;
}

}  // namespace corrosion
