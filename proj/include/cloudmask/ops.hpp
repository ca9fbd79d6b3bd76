#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "cloudmask/tensor.hpp"

namespace cloudmask {

using Rng = std::mt19937_64;

enum class Mode { kTrain, kEval };

namespace ops {

// ---------------------------------------------------------------------------
// Convolution. Kernels are square with extent 3 (padding 1) or 1 (padding 0);
// either way the output extent is ceil(H / stride).

std::size_t conv_output_extent(std::size_t extent, int stride);

// input [B,Cin,H,W], weight [Cout,Cin,k,k] -> [B,Cout,H',W'].
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, int stride);

struct ConvGrads {
  Tensor input;
  Tensor weight;
};

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& cached_input,
                          const Tensor& weight, int stride);

// ---------------------------------------------------------------------------
// Batch normalization over (batch, height, width) for each channel.

struct BatchNormCache {
  Tensor normalized;             // x_hat, before scale and shift
  std::vector<double> inv_std;   // 1 / sqrt(var + eps) per channel
};

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased (divide by count)
};

// Pure normalization. In train mode batch statistics are used and returned
// through `stats`; in eval mode the running statistics are used.
Tensor batchnorm_apply(const Tensor& input, const NormParams& params,
                       Mode mode, BatchNormCache* cache, BatchStats* stats);

// running <- momentum * running + (1 - momentum) * batch
void update_running_stats(NormParams& params, const BatchStats& stats);

// Normalizes and, in train mode, folds the batch statistics into the
// running averages. Train mode needs at least two samples.
Tensor batchnorm_forward(const Tensor& input, NormParams& params, Mode mode,
                         BatchNormCache* cache = nullptr);

struct BatchNormGrads {
  Tensor input;
  std::vector<double> scale;
  std::vector<double> shift;
};

// Backward of the train-mode map (batch statistics).
BatchNormGrads batchnorm_backward(const Tensor& grad_out,
                                  const BatchNormCache& cache,
                                  const NormParams& params);

// ---------------------------------------------------------------------------
// Pointwise and pooling layers.

Tensor relu_forward(const Tensor& input);
// `output` is the cached forward result.
Tensor relu_backward(const Tensor& grad_out, const Tensor& output);

// [B,C,H,W] -> [B,C]
Tensor avgpool_global_forward(const Tensor& input);
Tensor avgpool_global_backward(const Tensor& grad_out, std::size_t height,
                               std::size_t width);

// input [B,In], weight [Out,In], bias [Out] -> [B,Out]
Tensor fully_connected_forward(const Tensor& input, const Tensor& weight,
                               const Tensor& bias);

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

LinearGrads fully_connected_backward(const Tensor& grad_out,
                                     const Tensor& cached_input,
                                     const Tensor& weight);

// Inverted dropout: kept units are scaled by 1/keep. Eval mode is the exact
// identity and `mask` is left empty.
Tensor dropout_forward(const Tensor& input, double keep, Mode mode, Rng& rng,
                       std::vector<std::uint8_t>* mask);
Tensor dropout_backward(const Tensor& grad_out,
                        std::span<const std::uint8_t> mask, double keep);

// Row-wise softmax of [B,K] logits.
Tensor softmax(const Tensor& logits);

// ---------------------------------------------------------------------------
// Binary cross entropy on the cloud/shadow column (index 1) of [B,2]
// softmax outputs. Labels are 0 (clear) or 1 (cloud/shadow).

inline constexpr double kLogClamp = 1e-12;

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;  // d(loss)/d(pre-softmax logits), [B,2]
};

LossResult cross_entropy_loss(const Tensor& probabilities,
                              std::span<const int> labels);

}  // namespace ops
}  // namespace cloudmask
