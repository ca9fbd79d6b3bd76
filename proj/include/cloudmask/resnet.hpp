#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cloudmask/gradcheck.hpp"
#include "cloudmask/ops.hpp"
#include "cloudmask/tensor.hpp"

namespace cloudmask {

// The 6n+2 CIFAR-style residual classifier: a 3x3 stem, three stages of n
// basic blocks, global average pooling, dropout, a 2-way linear layer and a
// softmax.
struct NetworkConfig {
  int depth_param = 3;
  std::array<std::size_t, 3> stage_widths{16, 32, 64};
  std::size_t input_channels = 7;
  std::size_t input_extent = 15;
  std::size_t num_classes = 2;
  double dropout_keep = 0.5;
  // Band identity of each input channel; empty when unknown.
  std::vector<std::string> input_bands;

  void validate() const;
  int weighted_layers() const { return 6 * depth_param + 2; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

enum class LayerRole { kStem, kConv1, kConv2, kShortcut, kClassifier };

// Structural description of one layer, derived from a NetworkConfig.
struct LayerSpec {
  std::string key;  // "stem", "stage2.block0.conv1", "stage2.block0.shortcut", "classifier"
  LayerRole role;
  int stage = 0;  // 1..3 for block layers
  int block = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  int stride = 1;
};

std::vector<LayerSpec> layer_layout(const NetworkConfig& config);

class ParameterSet {
 public:
  struct Entry {
    LayerSpec spec;
    LayerParams params;
  };

  ParameterSet() = default;
  explicit ParameterSet(NetworkConfig config) : config_(std::move(config)) {}

  const NetworkConfig& config() const { return config_; }
  NetworkConfig& mutable_config() { return config_; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  LayerParams& at(const std::string& key);
  const LayerParams& at(const std::string& key) const;
  bool contains(const std::string& key) const;

  // Convolutions outside the shortcut path plus the classifier.
  int weighted_layer_count() const;
  bool all_finite() const;
  // Key set and array shapes agree with layer_layout(config()).
  void validate_structure() const;

  // Calls fn(name, values) for every learnable array in a fixed order.
  void for_each_learnable(
      const std::function<void(const std::string&, std::span<double>)>& fn);
  void for_each_learnable(
      const std::function<void(const std::string&, std::span<const double>)>&
          fn) const;

  // Same structure with every learnable array zeroed.
  ParameterSet zeros_like() const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  NetworkConfig config_;
  std::vector<Entry> entries_;
};

// Fan-in-scaled Gaussian weights, unit norm scale, zero shift and bias.
ParameterSet build(const NetworkConfig& config, std::uint64_t seed);

// Intermediate activations, recorded on request.
struct ForwardTrace {
  Tensor stem;
  std::array<Tensor, 3> stages;
  Tensor pooled;
  Tensor logits;
};

// Activations kept by a train-mode forward pass for the matching backward.
struct UnitCache {
  Tensor input;
  ops::BatchNormCache norm;
  Tensor output;
};

struct BlockCache {
  UnitCache conv1;
  UnitCache conv2;
  UnitCache shortcut;  // empty unless the block projects its input
  Tensor output;
};

struct ForwardCache {
  bool valid = false;
  Tensor input;
  UnitCache stem;
  std::vector<BlockCache> blocks;
  Tensor stage_output;
  Tensor pooled;
  std::vector<std::uint8_t> dropout_mask;
  double dropout_keep = 1.0;
  Tensor dropped;
  Tensor probabilities;
};

// Eval-mode forward: running statistics, dropout off. Returns [B,2].
Tensor forward(const ParameterSet& params, const Tensor& batch,
               ForwardTrace* trace = nullptr);

// Train mode uses batch statistics, folds them into the running averages,
// applies dropout from `rng` and fills `cache` for backward().
Tensor forward(ParameterSet& params, const Tensor& batch, Mode mode,
               ForwardCache* cache, Rng* rng, ForwardTrace* trace = nullptr);

struct BackwardResult {
  double loss = 0.0;  // unscaled mean cross entropy
  ParameterSet gradients;
  Tensor input_gradient;
};

// Gradients of loss_scale * mean cross entropy. Consumes the cache.
BackwardResult backward(const ParameterSet& params, ForwardCache& cache,
                        std::span<const int> labels, double loss_scale = 1.0);

// Mean cross entropy of a train-mode pass as a Differentiable over every
// learnable array and the input batch. Dropout reuses the same mask on each
// evaluation.
class NetworkLoss : public Differentiable {
 public:
  NetworkLoss(ParameterSet& params, Tensor input, std::vector<int> labels,
              std::uint64_t dropout_seed = 7);
  double evaluate() override;
  std::vector<CheckedArray> gradients() override;
  std::uint64_t kink_signature() const override { return signature_; }

 private:
  ParameterSet& params_;
  Tensor input_;
  std::vector<int> labels_;
  std::uint64_t dropout_seed_;
  BackwardResult last_;
  std::uint64_t signature_ = 0;
};

}  // namespace cloudmask
