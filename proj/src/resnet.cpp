#include "cloudmask/resnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cloudmask/errors.hpp"

namespace cloudmask {

void NetworkConfig::validate() const {
  if (depth_param < 1) {
    throw ConfigError("depth parameter n must be a positive integer, got " +
                      std::to_string(depth_param));
  }
  for (std::size_t w : stage_widths) {
    if (w == 0) throw ConfigError("stage widths must be positive");
  }
  if (input_channels < 1 || input_channels > 8) {
    throw ConfigError("input channel count must lie in [1, 8]");
  }
  if (input_extent < 3 || input_extent % 2 == 0) {
    throw ConfigError("input extent must be odd so a central pixel exists");
  }
  if (num_classes != 2) throw ConfigError("the classifier is binary");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw ConfigError("dropout keep probability must lie in (0, 1]");
  }
  if (!input_bands.empty() && input_bands.size() != input_channels) {
    throw ConfigError("band list length differs from input channel count");
  }
}

std::vector<LayerSpec> layer_layout(const NetworkConfig& config) {
  config.validate();
  std::vector<LayerSpec> layout;
  layout.push_back({"stem", LayerRole::kStem, 0, 0, config.input_channels,
                    config.stage_widths[0], 3, 1});
  std::size_t in = config.stage_widths[0];
  for (int s = 0; s < 3; ++s) {
    const std::size_t width = config.stage_widths[s];
    for (int b = 0; b < config.depth_param; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string prefix =
          "stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".";
      layout.push_back({prefix + "conv1", LayerRole::kConv1, s + 1, b, in,
                        width, 3, stride});
      layout.push_back({prefix + "conv2", LayerRole::kConv2, s + 1, b, width,
                        width, 3, 1});
      if (stride != 1 || in != width) {
        layout.push_back({prefix + "shortcut", LayerRole::kShortcut, s + 1, b,
                          in, width, 1, stride});
      }
      in = width;
    }
  }
  layout.push_back({"classifier", LayerRole::kClassifier, 0, 0, in,
                    config.num_classes, 1, 1});
  return layout;
}

// ---------------------------------------------------------------------------
// ParameterSet

LayerParams& ParameterSet::at(const std::string& key) {
  for (auto& e : entries_) {
    if (e.spec.key == key) return e.params;
  }
  throw ContractViolation("no layer named " + key);
}

const LayerParams& ParameterSet::at(const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.spec.key == key) return e.params;
  }
  throw ContractViolation("no layer named " + key);
}

bool ParameterSet::contains(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.spec.key == key; });
}

int ParameterSet::weighted_layer_count() const {
  int count = 0;
  for (const auto& e : entries_) {
    if (e.spec.role != LayerRole::kShortcut) ++count;
  }
  return count;
}

bool ParameterSet::all_finite() const {
  bool ok = true;
  for_each_learnable([&](const std::string&, std::span<const double> v) {
    for (double x : v) ok = ok && std::isfinite(x);
  });
  for (const auto& e : entries_) {
    if (!e.params.norm) continue;
    for (double x : e.params.norm->running_mean) ok = ok && std::isfinite(x);
    for (double x : e.params.norm->running_var) ok = ok && std::isfinite(x);
  }
  return ok;
}

void ParameterSet::validate_structure() const {
  const auto layout = layer_layout(config_);
  if (layout.size() != entries_.size()) {
    throw ContractViolation("parameter set has " +
                            std::to_string(entries_.size()) +
                            " layers, configuration requires " +
                            std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const LayerSpec& want = layout[i];
    const Entry& got = entries_[i];
    if (got.spec.key != want.key) {
      throw ContractViolation("layer " + std::to_string(i) + " is " +
                              got.spec.key + ", expected " + want.key);
    }
    got.params.validate();
    Tensor::Shape shape;
    if (want.role == LayerRole::kClassifier) {
      shape = {want.out_channels, want.in_channels};
      if (!got.params.bias) throw ContractViolation("classifier lacks a bias");
    } else {
      shape = {want.out_channels, want.in_channels, want.kernel, want.kernel};
      if (!got.params.norm) {
        throw ContractViolation(want.key + " lacks normalization parameters");
      }
    }
    if (got.params.weight.shape() != shape) {
      throw ContractViolation(want.key + " has weight shape " +
                              got.params.weight.shape_string());
    }
  }
}

void ParameterSet::for_each_learnable(
    const std::function<void(const std::string&, std::span<double>)>& fn) {
  for (auto& e : entries_) {
    fn(e.spec.key + ".weight", e.params.weight.data());
    if (e.params.bias) fn(e.spec.key + ".bias", e.params.bias->data());
    if (e.params.norm) {
      fn(e.spec.key + ".scale", e.params.norm->scale);
      fn(e.spec.key + ".shift", e.params.norm->shift);
    }
  }
}

void ParameterSet::for_each_learnable(
    const std::function<void(const std::string&, std::span<const double>)>&
        fn) const {
  for (const auto& e : entries_) {
    fn(e.spec.key + ".weight", e.params.weight.data());
    if (e.params.bias) fn(e.spec.key + ".bias", e.params.bias->data());
    if (e.params.norm) {
      fn(e.spec.key + ".scale", e.params.norm->scale);
      fn(e.spec.key + ".shift", e.params.norm->shift);
    }
  }
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet z = *this;
  z.for_each_learnable([](const std::string&, std::span<double> v) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  return z;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (!(a.config_ == b.config_) || a.entries_.size() != b.entries_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.spec.key != y.spec.key || !(x.params.weight == y.params.weight)) {
      return false;
    }
    if (x.params.bias.has_value() != y.params.bias.has_value() ||
        (x.params.bias && !(*x.params.bias == *y.params.bias))) {
      return false;
    }
    if (x.params.norm.has_value() != y.params.norm.has_value()) return false;
    if (x.params.norm) {
      const auto& m = *x.params.norm;
      const auto& n = *y.params.norm;
      if (m.scale != n.scale || m.shift != n.shift ||
          m.running_mean != n.running_mean || m.running_var != n.running_var ||
          m.momentum != n.momentum || m.epsilon != n.epsilon) {
        return false;
      }
    }
  }
  return true;
}

ParameterSet build(const NetworkConfig& config, std::uint64_t seed) {
  ParameterSet params(config);
  Rng rng(seed);
  for (const LayerSpec& spec : layer_layout(config)) {
    LayerParams layer;
    if (spec.role == LayerRole::kClassifier) {
      layer.weight = Tensor({spec.out_channels, spec.in_channels});
      layer.bias = Tensor({spec.out_channels});
    } else {
      layer.weight =
          Tensor({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
      layer.norm = NormParams(spec.out_channels);
    }
    const double fan_in = static_cast<double>(layer.weight.size() / spec.out_channels);
    std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / fan_in));
    for (double& w : layer.weight.values()) w = gauss(rng);
    params.entries().push_back({spec, std::move(layer)});
  }
  return params;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct PendingStats {
  std::size_t entry = 0;
  ops::BatchStats stats;
};

class ForwardRunner {
 public:
  ForwardRunner(const ParameterSet& params, Mode mode, ForwardCache* cache,
                Rng* rng, std::vector<PendingStats>* pending)
      : params_(params), mode_(mode), cache_(cache), rng_(rng), pending_(pending) {}

  Tensor run(const Tensor& batch, ForwardTrace* trace) {
    const NetworkConfig& cfg = params_.config();
    if (batch.rank() != 4 || batch.dim(1) != cfg.input_channels ||
        batch.dim(2) != cfg.input_extent || batch.dim(3) != cfg.input_extent) {
      throw ContractViolation(
          "network expects [B," + std::to_string(cfg.input_channels) + "," +
          std::to_string(cfg.input_extent) + "," +
          std::to_string(cfg.input_extent) + "] input, got " +
          batch.shape_string());
    }
    const auto& entries = params_.entries();
    std::size_t idx = 0;
    Tensor x = unit(batch, idx++, true, cache_ ? &cache_->stem : nullptr);
    if (trace) trace->stem = x;
    if (cache_) {
      cache_->input = batch;
      cache_->blocks.clear();
    }
    while (entries[idx].spec.role != LayerRole::kClassifier) {
      const int stage = entries[idx].spec.stage;
      BlockCache* bc = nullptr;
      if (cache_) bc = &cache_->blocks.emplace_back();
      const std::size_t c1 = idx++;
      const std::size_t c2 = idx++;
      std::size_t sc = 0;
      if (entries[idx].spec.role == LayerRole::kShortcut) sc = idx++;
      Tensor a = unit(x, c1, true, bc ? &bc->conv1 : nullptr);
      Tensor b = unit(a, c2, false, bc ? &bc->conv2 : nullptr);
      if (sc) {
        Tensor s = unit(x, sc, false, bc ? &bc->shortcut : nullptr);
        add_into(b, s);
      } else {
        add_into(b, x);
      }
      x = ops::relu_forward(b);
      if (bc) bc->output = x;
      const bool stage_end = entries[idx].spec.role == LayerRole::kClassifier ||
                             entries[idx].spec.stage != stage;
      if (trace && stage_end) trace->stages[stage - 1] = x;
    }
    Tensor pooled = ops::avgpool_global_forward(x);
    if (trace) trace->pooled = pooled;
    Tensor dropped = pooled;
    const double keep = params_.config().dropout_keep;
    if (mode_ == Mode::kTrain && keep < 1.0) {
      if (!rng_) throw ContractViolation("train-mode dropout needs an RNG stream");
      dropped = ops::dropout_forward(pooled, keep, mode_, *rng_,
                                     cache_ ? &cache_->dropout_mask : nullptr);
      if (cache_) cache_->dropout_keep = keep;
    } else if (cache_) {
      cache_->dropout_mask.assign(pooled.size(), 1);
      cache_->dropout_keep = 1.0;
    }
    const LayerParams& fc = entries[idx].params;
    Tensor logits = ops::fully_connected_forward(dropped, fc.weight, *fc.bias);
    if (trace) trace->logits = logits;
    Tensor probs = ops::softmax(logits);
    if (cache_) {
      cache_->stage_output = std::move(x);
      cache_->pooled = std::move(pooled);
      cache_->dropped = std::move(dropped);
      cache_->probabilities = probs;
      cache_->valid = mode_ == Mode::kTrain;
    }
    return probs;
  }

 private:
  static void add_into(Tensor& a, const Tensor& b) {
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
  }

  // conv -> norm (-> relu)
  Tensor unit(const Tensor& in, std::size_t entry, bool relu, UnitCache* uc) {
    const auto& e = params_.entries()[entry];
    Tensor conv = ops::conv2d_forward(in, e.params.weight, e.spec.stride);
    ops::BatchStats stats;
    Tensor out = ops::batchnorm_apply(conv, *e.params.norm, mode_,
                                      uc ? &uc->norm : nullptr,
                                      mode_ == Mode::kTrain ? &stats : nullptr);
    if (mode_ == Mode::kTrain && pending_) {
      pending_->push_back({entry, std::move(stats)});
    }
    if (relu) out = ops::relu_forward(out);
    if (uc) {
      uc->input = in;
      uc->output = out;
    }
    return out;
  }

  const ParameterSet& params_;
  Mode mode_;
  ForwardCache* cache_;
  Rng* rng_;
  std::vector<PendingStats>* pending_;
};

// Backward through conv -> norm (-> relu); writes parameter gradients.
Tensor unit_backward(const ParameterSet::Entry& e, const UnitCache& uc,
                     Tensor grad, bool relu, LayerParams& out) {
  if (relu) grad = ops::relu_backward(grad, uc.output);
  ops::BatchNormGrads bn = ops::batchnorm_backward(grad, uc.norm, *e.params.norm);
  out.norm->scale = std::move(bn.scale);
  out.norm->shift = std::move(bn.shift);
  ops::ConvGrads cg =
      ops::conv2d_backward(bn.input, uc.input, e.params.weight, e.spec.stride);
  out.weight = std::move(cg.weight);
  return std::move(cg.input);
}

}  // namespace

Tensor forward(const ParameterSet& params, const Tensor& batch,
               ForwardTrace* trace) {
  ForwardRunner runner(params, Mode::kEval, nullptr, nullptr, nullptr);
  return runner.run(batch, trace);
}

Tensor forward(ParameterSet& params, const Tensor& batch, Mode mode,
               ForwardCache* cache, Rng* rng, ForwardTrace* trace) {
  std::vector<PendingStats> pending;
  ForwardRunner runner(params, mode, cache, rng, &pending);
  Tensor probs = runner.run(batch, trace);
  for (const auto& p : pending) {
    ops::update_running_stats(*params.entries()[p.entry].params.norm, p.stats);
  }
  return probs;
}

BackwardResult backward(const ParameterSet& params, ForwardCache& cache,
                        std::span<const int> labels, double loss_scale) {
  if (!cache.valid) {
    throw ContractViolation(
        "backward needs the cache of a fresh train-mode forward pass");
  }
  if (labels.size() != cache.probabilities.dim(0)) {
    throw ContractViolation("label count differs from cached batch size");
  }
  cache.valid = false;
  const auto& entries = params.entries();
  BackwardResult result;
  result.gradients = params.zeros_like();
  auto& gentries = result.gradients.entries();

  ops::LossResult loss = ops::cross_entropy_loss(cache.probabilities, labels);
  result.loss = loss.loss;
  Tensor g = std::move(loss.grad_logits);
  if (loss_scale != 1.0) {
    for (double& v : g.values()) v *= loss_scale;
  }

  const std::size_t fc_idx = entries.size() - 1;
  ops::LinearGrads lg = ops::fully_connected_backward(
      g, cache.dropped, entries[fc_idx].params.weight);
  gentries[fc_idx].params.weight = std::move(lg.weight);
  gentries[fc_idx].params.bias = std::move(lg.bias);
  g = ops::dropout_backward(lg.input, cache.dropout_mask, cache.dropout_keep);
  g = ops::avgpool_global_backward(g, cache.stage_output.dim(2),
                                   cache.stage_output.dim(3));

  // Walk the blocks in reverse; entry indices mirror the forward order.
  std::vector<std::size_t> block_start;
  for (std::size_t i = 1; i < fc_idx; ++i) {
    if (entries[i].spec.role == LayerRole::kConv1) block_start.push_back(i);
  }
  for (std::size_t b = block_start.size(); b-- > 0;) {
    const std::size_t c1 = block_start[b];
    const std::size_t c2 = c1 + 1;
    const bool proj = entries[c1 + 2].spec.role == LayerRole::kShortcut;
    const BlockCache& bc = cache.blocks[b];
    Tensor gsum = ops::relu_backward(g, bc.output);
    Tensor ga = unit_backward(entries[c2], bc.conv2, gsum, false,
                              gentries[c2].params);
    Tensor gx = unit_backward(entries[c1], bc.conv1, std::move(ga), true,
                              gentries[c1].params);
    if (proj) {
      Tensor gs = unit_backward(entries[c1 + 2], bc.shortcut, gsum, false,
                                gentries[c1 + 2].params);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
    } else {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gsum[i];
    }
    g = std::move(gx);
  }
  result.input_gradient =
      unit_backward(entries[0], cache.stem, std::move(g), true, gentries[0].params);
  return result;
}

// ---------------------------------------------------------------------------
// NetworkLoss

NetworkLoss::NetworkLoss(ParameterSet& params, Tensor input,
                         std::vector<int> labels, std::uint64_t dropout_seed)
    : params_(params),
      input_(std::move(input)),
      labels_(std::move(labels)),
      dropout_seed_(dropout_seed) {}

double NetworkLoss::evaluate() {
  Rng rng(dropout_seed_);
  ForwardCache cache;
  Tensor probs = forward(params_, input_, Mode::kTrain, &cache, &rng);
  // Active/inactive pattern of every ReLU output.
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const Tensor& t) {
    for (double v : t.data()) h = (h ^ static_cast<std::uint64_t>(v > 0.0)) * 1099511628211ull;
  };
  mix(cache.stem.output);
  for (const auto& b : cache.blocks) {
    mix(b.conv1.output);
    mix(b.output);
  }
  signature_ = h;
  return ops::cross_entropy_loss(probs, labels_).loss;
}

std::vector<CheckedArray> NetworkLoss::gradients() {
  Rng rng(dropout_seed_);
  ForwardCache cache;
  forward(params_, input_, Mode::kTrain, &cache, &rng);
  last_ = backward(params_, cache, labels_);
  std::vector<CheckedArray> arrays;
  std::vector<std::span<const double>> grads;
  last_.gradients.for_each_learnable(
      [&](const std::string&, std::span<const double> v) { grads.push_back(v); });
  std::size_t i = 0;
  params_.for_each_learnable([&](const std::string& name, std::span<double> v) {
    arrays.push_back({name, v, grads[i++]});
  });
  arrays.push_back({"input", input_.data(), last_.input_gradient.data()});
  return arrays;
}

}  // namespace cloudmask
