#include "cloudmask/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cloudmask/errors.hpp"
#include "gemm.hpp"

namespace cloudmask::ops {
namespace {

void require(bool cond, const char* what) {
  if (!cond) throw ContractViolation(what);
}

struct ConvGeometry {
  std::size_t batch, in_ch, in_h, in_w;
  std::size_t out_ch, kernel, out_h, out_w;
  int stride;
  std::size_t pad;

  std::size_t patch_len() const { return in_ch * kernel * kernel; }
  std::size_t out_pixels() const { return out_h * out_w; }
  std::size_t in_pixels() const { return in_h * in_w; }
  // 1x1 stride-1 convolutions read the input plane directly.
  bool direct() const { return kernel == 1 && stride == 1; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight,
                           int stride) {
  require(input.rank() == 4, "conv2d: input must be [B,C,H,W]");
  require(weight.rank() == 4, "conv2d: weight must be [Cout,Cin,k,k]");
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  const std::size_t k = weight.dim(2);
  require(k == weight.dim(3) && (k == 3 || k == 1),
          "conv2d: kernel must be 3x3 or 1x1");
  if (weight.dim(1) != input.dim(1)) {
    throw ContractViolation("conv2d: input has " +
                            std::to_string(input.dim(1)) +
                            " channels but kernel expects " +
                            std::to_string(weight.dim(1)));
  }
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_ch = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_ch = weight.dim(0);
  g.kernel = k;
  g.stride = stride;
  g.pad = k / 2;
  g.out_h = conv_output_extent(g.in_h, stride);
  g.out_w = conv_output_extent(g.in_w, stride);
  return g;
}

// Range of output columns ox whose input column ox*s + kx - pad lies inside
// [0, in_w).
struct ValidSpan {
  std::size_t lo, hi;
};

inline ValidSpan valid_columns(const ConvGeometry& g, std::size_t kx) {
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) -
                             static_cast<std::ptrdiff_t>(g.pad);
  std::ptrdiff_t lo = 0;
  while (lo * s + off < 0) ++lo;
  std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(g.out_w);
  while (hi > lo && (hi - 1) * s + off >= static_cast<std::ptrdiff_t>(g.in_w)) --hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// cols[(c*k + ky)*k + kx][oy*OW + ox] = x[c][oy*s + ky - pad][ox*s + kx - pad]
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t op = g.out_pixels();
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto ih = static_cast<std::ptrdiff_t>(g.in_h);
  const auto iw = static_cast<std::ptrdiff_t>(g.in_w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const double* plane = x + c * g.in_pixels();
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        double* dst = cols + row * op;
        const ValidSpan span = valid_columns(g, kx);
        const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y =
              static_cast<std::ptrdiff_t>(oy) * s +
              static_cast<std::ptrdiff_t>(ky) - pad;
          double* drow = dst + oy * g.out_w;
          if (y < 0 || y >= ih) {
            std::fill(drow, drow + g.out_w, 0.0);
            continue;
          }
          const double* srow = plane + y * iw + xoff;
          std::fill(drow, drow + span.lo, 0.0);
          if (s == 1) {
            std::copy(srow + span.lo, srow + span.hi, drow + span.lo);
          } else {
            for (std::size_t ox = span.lo; ox < span.hi; ++ox) {
              drow[ox] = srow[static_cast<std::ptrdiff_t>(ox) * s];
            }
          }
          std::fill(drow + span.hi, drow + g.out_w, 0.0);
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back onto the input plane.
void col2im_add(const ConvGeometry& g, const double* cols, double* x) {
  const std::size_t op = g.out_pixels();
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto ih = static_cast<std::ptrdiff_t>(g.in_h);
  const auto iw = static_cast<std::ptrdiff_t>(g.in_w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    double* plane = x + c * g.in_pixels();
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        const double* src = cols + row * op;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y =
              static_cast<std::ptrdiff_t>(oy) * s +
              static_cast<std::ptrdiff_t>(ky) - pad;
          if (y < 0 || y >= ih) continue;
          const double* srow = src + oy * g.out_w;
          double* drow = plane + y * iw;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx =
                static_cast<std::ptrdiff_t>(ox) * s +
                static_cast<std::ptrdiff_t>(kx) - pad;
            if (xx >= 0 && xx < iw) drow[xx] += srow[ox];
          }
        }
      }
    }
  }
}

std::size_t spatial(const Tensor& t) { return t.dim(2) * t.dim(3); }

}  // namespace

std::size_t conv_output_extent(std::size_t extent, int stride) {
  const auto s = static_cast<std::size_t>(stride);
  return (extent + s - 1) / s;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, int stride) {
  const ConvGeometry g = conv_geometry(input, weight, stride);
  Tensor out({g.batch, g.out_ch, g.out_h, g.out_w});
  const std::size_t kl = g.patch_len();
  const std::size_t op = g.out_pixels();
  std::vector<double> cols(g.direct() ? 0 : kl * op);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* x = input.data().data() + n * g.in_ch * g.in_pixels();
    const double* b = x;
    if (!g.direct()) {
      im2col(g, x, cols.data());
      b = cols.data();
    }
    detail::gemm(g.out_ch, op, kl, weight.data().data(),
                 static_cast<std::ptrdiff_t>(kl), 1, b, op,
                 out.data().data() + n * g.out_ch * op, op, false);
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& cached_input,
                          const Tensor& weight, int stride) {
  if (cached_input.empty()) {
    throw ContractViolation("conv2d_backward: missing cached forward input");
  }
  const ConvGeometry g = conv_geometry(cached_input, weight, stride);
  const Tensor::Shape expected{g.batch, g.out_ch, g.out_h, g.out_w};
  if (grad_out.shape() != expected) {
    throw ContractViolation("conv2d_backward: grad_out shape " +
                            grad_out.shape_string() +
                            " differs from forward output shape");
  }
  ConvGrads grads{Tensor(cached_input.shape()), Tensor(weight.shape())};
  const std::size_t kl = g.patch_len();
  const std::size_t op = g.out_pixels();
  std::vector<double> cols(g.direct() ? 0 : kl * op);
  std::vector<double> grad_t(op * g.out_ch);
  std::vector<double> grad_w_t(kl * g.out_ch, 0.0);
  std::vector<double> grad_cols(kl * op);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* x = cached_input.data().data() + n * g.in_ch * g.in_pixels();
    const double* gy = grad_out.data().data() + n * g.out_ch * op;
    double* gx = grads.input.data().data() + n * g.in_ch * g.in_pixels();
    const double* b = x;
    if (!g.direct()) {
      im2col(g, x, cols.data());
      b = cols.data();
    }
    for (std::size_t co = 0; co < g.out_ch; ++co) {
      for (std::size_t p = 0; p < op; ++p) grad_t[p * g.out_ch + co] = gy[co * op + p];
    }
    // dW^T[r][co] += sum_p cols[r][p] * gy[co][p]
    detail::gemm(kl, g.out_ch, op, b, static_cast<std::ptrdiff_t>(op), 1,
                 grad_t.data(), g.out_ch, grad_w_t.data(), g.out_ch, true);
    // dcols[r][p] = sum_co W[co][r] * gy[co][p]
    detail::gemm(kl, op, g.out_ch, weight.data().data(), 1,
                 static_cast<std::ptrdiff_t>(kl), gy, op, grad_cols.data(), op,
                 false);
    if (g.direct()) {
      for (std::size_t i = 0; i < kl * op; ++i) gx[i] += grad_cols[i];
    } else {
      col2im_add(g, grad_cols.data(), gx);
    }
  }
  for (std::size_t co = 0; co < g.out_ch; ++co) {
    for (std::size_t r = 0; r < kl; ++r) {
      grads.weight[co * kl + r] = grad_w_t[r * g.out_ch + co];
    }
  }
  return grads;
}

Tensor batchnorm_apply(const Tensor& input, const NormParams& params,
                       Mode mode, BatchNormCache* cache, BatchStats* stats) {
  require(input.rank() == 4, "batchnorm: input must be [B,C,H,W]");
  const std::size_t batch = input.dim(0);
  const std::size_t ch = input.dim(1);
  const std::size_t hw = spatial(input);
  if (params.channels() != ch) {
    throw ContractViolation("batchnorm: parameter channels differ from input");
  }
  Tensor out(input.shape());
  const double* x = input.data().data();
  double* y = out.data().data();

  if (mode == Mode::kEval) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double inv = 1.0 / std::sqrt(params.running_var[c] + params.epsilon);
      const double mean = params.running_mean[c];
      const double sc = params.scale[c];
      const double sh = params.shift[c];
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t off = (n * ch + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          y[off + i] = (x[off + i] - mean) * inv * sc + sh;
        }
      }
    }
    return out;
  }

  if (batch < 2) {
    throw DataError("batchnorm: train mode needs a batch of at least 2");
  }
  const double count = static_cast<double>(batch * hw);
  if (cache) {
    cache->normalized = Tensor(input.shape());
    cache->inv_std.assign(ch, 0.0);
  }
  if (stats) {
    stats->mean.assign(ch, 0.0);
    stats->var.assign(ch, 0.0);
  }
  for (std::size_t c = 0; c < ch; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const double* p = x + (n * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const double* p = x + (n * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / count;
    const double inv = 1.0 / std::sqrt(var + params.epsilon);
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xh = (x[off + i] - mean) * inv;
        if (cache) cache->normalized[off + i] = xh;
        y[off + i] = xh * params.scale[c] + params.shift[c];
      }
    }
    if (cache) cache->inv_std[c] = inv;
    if (stats) {
      stats->mean[c] = mean;
      stats->var[c] = var;
    }
  }
  return out;
}

void update_running_stats(NormParams& params, const BatchStats& stats) {
  const double m = params.momentum;
  for (std::size_t c = 0; c < params.channels(); ++c) {
    params.running_mean[c] = m * params.running_mean[c] + (1.0 - m) * stats.mean[c];
    params.running_var[c] = m * params.running_var[c] + (1.0 - m) * stats.var[c];
  }
}

Tensor batchnorm_forward(const Tensor& input, NormParams& params, Mode mode,
                         BatchNormCache* cache) {
  if (mode == Mode::kEval) {
    return batchnorm_apply(input, params, mode, cache, nullptr);
  }
  BatchStats stats;
  Tensor out = batchnorm_apply(input, params, mode, cache, &stats);
  update_running_stats(params, stats);
  return out;
}

BatchNormGrads batchnorm_backward(const Tensor& grad_out,
                                  const BatchNormCache& cache,
                                  const NormParams& params) {
  if (cache.normalized.empty() || grad_out.shape() != cache.normalized.shape()) {
    throw ContractViolation("batchnorm_backward: cache does not match grad_out");
  }
  const std::size_t batch = grad_out.dim(0);
  const std::size_t ch = grad_out.dim(1);
  const std::size_t hw = spatial(grad_out);
  const double count = static_cast<double>(batch * hw);
  BatchNormGrads g{Tensor(grad_out.shape()), std::vector<double>(ch, 0.0),
                   std::vector<double>(ch, 0.0)};
  const double* dy = grad_out.data().data();
  const double* xh = cache.normalized.data().data();
  double* dx = g.input.data().data();
  for (std::size_t c = 0; c < ch; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xh += dy[off + i] * xh[off + i];
      }
    }
    g.shift[c] = sum_dy;
    g.scale[c] = sum_dy_xh;
    // dx = scale * inv_std / N * (N dy - sum(dy) - x_hat sum(dy x_hat))
    const double k = params.scale[c] * cache.inv_std[c] / count;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        dx[off + i] =
            k * (count * dy[off + i] - sum_dy - xh[off + i] * sum_dy_xh);
      }
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  auto src = input.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& output) {
  require(grad_out.shape() == output.shape(), "relu_backward: shape mismatch");
  Tensor g(grad_out.shape());
  auto dy = grad_out.data();
  auto y = output.data();
  auto dx = g.data();
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
  return g;
}

Tensor avgpool_global_forward(const Tensor& input) {
  require(input.rank() == 4, "avgpool: input must be [B,C,H,W]");
  const std::size_t bc = input.dim(0) * input.dim(1);
  const std::size_t hw = spatial(input);
  Tensor out({input.dim(0), input.dim(1)});
  const double* x = input.data().data();
  for (std::size_t i = 0; i < bc; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += x[i * hw + j];
    out[i] = s / static_cast<double>(hw);
  }
  return out;
}

Tensor avgpool_global_backward(const Tensor& grad_out, std::size_t height,
                               std::size_t width) {
  require(grad_out.rank() == 2, "avgpool_backward: grad must be [B,C]");
  const std::size_t hw = height * width;
  Tensor g({grad_out.dim(0), grad_out.dim(1), height, width});
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    std::fill_n(g.data().data() + i * hw, hw, grad_out[i] * inv);
  }
  return g;
}

Tensor fully_connected_forward(const Tensor& input, const Tensor& weight,
                               const Tensor& bias) {
  require(input.rank() == 2 && weight.rank() == 2,
          "fully_connected: input [B,In] and weight [Out,In] required");
  const std::size_t batch = input.dim(0);
  const std::size_t in = input.dim(1);
  const std::size_t out_n = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ContractViolation("fully_connected: weight expects " +
                            std::to_string(weight.dim(1)) + " inputs, got " +
                            std::to_string(in));
  }
  require(bias.size() == out_n, "fully_connected: bias length mismatch");
  Tensor out({batch, out_n});
  for (std::size_t n = 0; n < batch; ++n) {
    const double* x = input.data().data() + n * in;
    for (std::size_t o = 0; o < out_n; ++o) {
      const double* w = weight.data().data() + o * in;
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += w[i] * x[i];
      out[n * out_n + o] = s + bias[o];
    }
  }
  return out;
}

LinearGrads fully_connected_backward(const Tensor& grad_out,
                                     const Tensor& cached_input,
                                     const Tensor& weight) {
  if (cached_input.empty()) {
    throw ContractViolation("fully_connected_backward: missing cached input");
  }
  const std::size_t batch = cached_input.dim(0);
  const std::size_t in = cached_input.dim(1);
  const std::size_t out_n = weight.dim(0);
  require(grad_out.rank() == 2 && grad_out.dim(0) == batch &&
              grad_out.dim(1) == out_n,
          "fully_connected_backward: grad_out shape mismatch");
  LinearGrads g{Tensor(cached_input.shape()), Tensor(weight.shape()),
                Tensor({out_n})};
  for (std::size_t n = 0; n < batch; ++n) {
    const double* x = cached_input.data().data() + n * in;
    double* dx = g.input.data().data() + n * in;
    for (std::size_t o = 0; o < out_n; ++o) {
      const double dy = grad_out[n * out_n + o];
      const double* w = weight.data().data() + o * in;
      double* dw = g.weight.data().data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        dw[i] += dy * x[i];
        dx[i] += dy * w[i];
      }
      g.bias[o] += dy;
    }
  }
  return g;
}

Tensor dropout_forward(const Tensor& input, double keep, Mode mode, Rng& rng,
                       std::vector<std::uint8_t>* mask) {
  if (!(keep > 0.0 && keep <= 1.0)) {
    throw ConfigError("dropout keep probability must lie in (0, 1]");
  }
  if (mode == Mode::kEval) {
    if (mask) mask->clear();
    return input;
  }
  Tensor out(input.shape());
  std::vector<std::uint8_t> local;
  std::vector<std::uint8_t>& m = mask ? *mask : local;
  m.assign(input.size(), 0);
  for (std::size_t i = 0; i < input.size(); ++i) {
    // 53 random bits mapped onto [0, 1).
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u < keep) {
      m[i] = 1;
      out[i] = input[i] / keep;
    }
  }
  return out;
}

Tensor dropout_backward(const Tensor& grad_out,
                        std::span<const std::uint8_t> mask, double keep) {
  require(mask.size() == grad_out.size(), "dropout_backward: mask size mismatch");
  Tensor g(grad_out.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) g[i] = grad_out[i] / keep;
  }
  return g;
}

Tensor softmax(const Tensor& logits) {
  require(logits.rank() == 2, "softmax: logits must be [B,K]");
  const std::size_t batch = logits.dim(0);
  const std::size_t k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const double* z = logits.data().data() + n * k;
    double* p = out.data().data() + n * k;
    const double zmax = *std::max_element(z, z + k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      p[i] = std::exp(z[i] - zmax);
      total += p[i];
    }
    for (std::size_t i = 0; i < k; ++i) p[i] /= total;
  }
  return out;
}

LossResult cross_entropy_loss(const Tensor& probabilities,
                              std::span<const int> labels) {
  require(probabilities.rank() == 2 && probabilities.dim(1) == 2,
          "cross_entropy_loss: probabilities must be [B,2]");
  const std::size_t batch = probabilities.dim(0);
  require(batch >= 1, "cross_entropy_loss: empty batch");
  require(labels.size() == batch, "cross_entropy_loss: label count mismatch");
  LossResult r{0.0, Tensor(probabilities.shape())};
  const double inv_b = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    const int y = labels[n];
    if (y != 0 && y != 1) throw DataError("cross_entropy_loss: label not in {0,1}");
    const double p_clear = probabilities[n * 2];
    const double p_cloud = probabilities[n * 2 + 1];
    const double p = (y == 1) ? p_cloud : p_clear;
    // Only the side entering the logarithm is clamped, so a saturated correct
    // prediction costs exactly 0.
    total -= std::log(std::max(p, kLogClamp));
    r.grad_logits[n * 2] = (p_clear - (y == 0 ? 1.0 : 0.0)) * inv_b;
    r.grad_logits[n * 2 + 1] = (p_cloud - (y == 1 ? 1.0 : 0.0)) * inv_b;
  }
  r.loss = total * inv_b;
  return r;
}

}  // namespace cloudmask::ops
