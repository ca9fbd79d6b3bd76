#include "cloudmask/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "binio.hpp"
#include "cloudmask/checkpoint.hpp"
#include "cloudmask/errors.hpp"
#include "jsonio.hpp"

namespace cloudmask {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(lr_initial > 0) || !(lr_decay_factor > 1) || !(lr_floor > 0)) {
    throw ConfigError("learning-rate settings must be positive (decay factor > 1)");
  }
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
  if (!(plateau_min_delta >= 0)) throw ConfigError("plateau_min_delta must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0,1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (!(dropout_keep > 0 && dropout_keep <= 1)) throw ConfigError("dropout_keep must be in (0,1]");
  if (max_epochs < 1 || min_epochs < 0 || min_epochs > max_epochs) {
    throw ConfigError("need 0 <= min_epochs <= max_epochs and max_epochs >= 1");
  }
}

TrainState TrainState::start(const ParameterSet& params, const TrainConfig& config) {
  TrainState s;
  s.lr = config.lr_initial;
  s.velocity = params.zeros_like();
  s.rng.seed(config.seed);
  return s;
}

void sgd_nesterov_step(ParameterSet& params, const ParameterSet& grads,
                       TrainState& state, const TrainConfig& config) {
  std::vector<std::span<const double>> g;
  grads.for_each_learnable([&](const std::string& name, std::span<const double> v) {
    for (double x : v) {
      if (!std::isfinite(x)) throw DataError("non-finite gradient in " + name);
    }
    g.push_back(v);
  });
  std::vector<std::span<double>> vel;
  state.velocity.for_each_learnable(
      [&](const std::string&, std::span<double> v) { vel.push_back(v); });
  const double mu = config.momentum;
  const double lr = state.lr;
  const double wd = config.weight_decay;
  std::size_t k = 0;
  params.for_each_learnable([&](const std::string& name, std::span<double> theta) {
    if (k >= g.size() || g[k].size() != theta.size() || vel[k].size() != theta.size()) {
      throw ContractViolation("sgd_nesterov_step: gradient layout differs at " + name);
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double d = g[k][i] + wd * theta[i];
      vel[k][i] = mu * vel[k][i] - lr * d;
      theta[i] += mu * vel[k][i] - lr * d;
    }
    ++k;
  });
}

bool plateau_scheduler(double val_loss, TrainState& state, const TrainConfig& config) {
  if (val_loss < state.plateau_best - config.plateau_min_delta) {
    state.plateau_best = val_loss;
    state.plateau_wait = 0;
    return false;
  }
  if (++state.plateau_wait < config.plateau_patience) return false;
  ++state.lr_decays;
  state.lr = config.lr_initial / std::pow(config.lr_decay_factor, state.lr_decays);
  state.plateau_wait = 0;
  return true;
}

std::vector<std::size_t> epoch_batches(std::size_t samples, std::size_t batch_size) {
  std::vector<std::size_t> out(samples / batch_size, batch_size);
  const std::size_t rest = samples % batch_size;
  if (rest == 1 && !out.empty()) {
    out.back() += 1;
  } else if (rest > 0) {
    out.push_back(rest);
  }
  return out;
}

namespace {

struct Inputs {
  const SceneLookup& scenes;
  const NetworkConfig& config;
  std::map<std::string, std::vector<std::size_t>> bands;

  Inputs(const SceneLookup& s, const NetworkConfig& c) : scenes(s), config(c) {}

  const BandStack& scene(const std::string& id) const {
    auto it = scenes.find(id);
    if (it == scenes.end() || it->second == nullptr) {
      throw ConfigError("sample set references unknown scene '" + id + "'");
    }
    return *it->second;
  }

  const std::vector<std::size_t>& indices(const std::string& id) {
    auto it = bands.find(id);
    if (it != bands.end()) return it->second;
    return bands[id] = resolve_input_bands(scene(id), config.input_bands,
                                           config.input_channels);
  }

  // Fills a [n,C,15,15] batch and the matching labels.
  void assemble(const std::vector<const PatchRef*>& refs, Tensor& batch,
                std::vector<int>& labels) {
    const std::size_t c = config.input_channels;
    const std::size_t e = config.input_extent;
    batch = Tensor({refs.size(), c, e, e});
    labels.resize(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const PatchRef& p = *refs[i];
      extract_into(scene(p.scene_id), p.row, p.col, indices(p.scene_id),
                   batch.data().data() + i * c * e * e);
      labels[i] = p.label == MaskLabel::kCloudShadow ? 1 : 0;
    }
  }
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace

EvalSummary evaluate_patches(const ParameterSet& params,
                             const std::vector<PatchRef>& patches,
                             const SceneLookup& scenes, std::size_t batch_size) {
  EvalSummary s;
  s.count = patches.size();
  if (patches.empty()) return s;
  Inputs in(scenes, params.config());
  double loss_sum = 0.0;
  std::size_t correct = 0;
  Tensor batch;
  std::vector<int> labels;
  for (std::size_t start = 0; start < patches.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, patches.size() - start);
    std::vector<const PatchRef*> refs(n);
    for (std::size_t i = 0; i < n; ++i) refs[i] = &patches[start + i];
    in.assemble(refs, batch, labels);
    const Tensor probs = forward(params, batch);
    loss_sum += ops::cross_entropy_loss(probs, labels).loss * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int pred = probs[i * 2 + 1] >= 0.5 ? 1 : 0;
      if (pred == labels[i]) ++correct;
    }
  }
  s.loss = loss_sum / static_cast<double>(patches.size());
  s.accuracy = static_cast<double>(correct) / static_cast<double>(patches.size());
  return s;
}

std::string format_history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss,val_accuracy,lr\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                  r.train_loss, r.val_loss, r.val_accuracy, r.lr);
    out += line;
  }
  return out;
}

TrainResult train(const SampleSet& samples, const SceneLookup& scenes,
                  const NetworkConfig& network, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  NetworkConfig net = network;
  net.dropout_keep = config.dropout_keep;
  net.validate();

  std::vector<PatchRef> train_set;
  std::vector<PatchRef> val_set;
  for (const auto& p : samples.patches) {
    if (p.split == Split::kTrain) train_set.push_back(p);
    else if (p.split == Split::kVal) val_set.push_back(p);
  }
  if (val_set.empty()) throw ConfigError("validation set is empty");
  if (train_set.size() < 2) throw ConfigError("need at least two training patches");

  ParameterSet params = build(net, config.seed);
  TrainState state = TrainState::start(params, config);
  // Dropout draws come from a stream separate from shuffling.
  Rng dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Inputs in(scenes, net);
  for (const auto& p : samples.patches) in.indices(p.scene_id);

  TrainResult result;
  result.best = params;
  const std::vector<std::size_t> sizes = epoch_batches(train_set.size(), config.batch_size);
  std::vector<std::size_t> order(train_set.size());
  Tensor batch;
  std::vector<int> labels;
  ForwardCache cache;

  const std::string manifest_text = format_manifest(samples);
  auto write_outputs = [&] {
    if (!options.out_dir) return;
    const auto& dir = *options.out_dir;
    write_text(dir / "history.csv", format_history_csv(state.history));
    nlohmann::json run;
    run["network"] = detail::to_json(net);
    run["train"] = detail::to_json(config);
    run["seed"] = config.seed;
    run["sample_manifest_fnv1a64"] = detail::hex64(detail::fnv1a64(
        reinterpret_cast<const std::uint8_t*>(manifest_text.data()), manifest_text.size()));
    run["train_patches"] = train_set.size();
    run["val_patches"] = val_set.size();
    run["best_epoch"] = result.best_epoch;
    run["best_val_loss"] = std::isfinite(result.best_val_loss)
                               ? nlohmann::json(result.best_val_loss)
                               : nlohmann::json(nullptr);
    run["epochs_completed"] = state.history.size();
    run["aborted"] = result.aborted;
    if (result.aborted) run["abort_reason"] = result.abort_reason;
    write_text(dir / "run.json", run.dump(2) + "\n");
  };

  while (true) {
    ++state.epoch;
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), state.rng);
    double loss_sum = 0.0;
    std::size_t pos = 0;
    try {
      for (const std::size_t n : sizes) {
        std::vector<const PatchRef*> refs(n);
        for (std::size_t i = 0; i < n; ++i) refs[i] = &train_set[order[pos + i]];
        pos += n;
        in.assemble(refs, batch, labels);
        forward(params, batch, Mode::kTrain, &cache, &dropout_rng);
        BackwardResult g = backward(params, cache, labels);
        if (!std::isfinite(g.loss)) throw DataError("non-finite training loss");
        sgd_nesterov_step(params, g.gradients, state, config);
        loss_sum += g.loss * static_cast<double>(n);
      }
      if (!params.all_finite()) throw DataError("non-finite parameters after update");
    } catch (const DataError& e) {
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(state.epoch) + ": " + e.what();
      break;
    }

    const EvalSummary val = evaluate_patches(params, val_set, scenes, config.batch_size);
    EpochRecord rec{state.epoch, loss_sum / static_cast<double>(train_set.size()), val.loss,
                    val.accuracy, state.lr};
    if (!std::isfinite(val.loss)) {
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(state.epoch) + ": non-finite validation loss";
      break;
    }
    state.history.push_back(rec);
    if (val.loss < state.best_val_loss) {
      state.best_val_loss = val.loss;
      state.best_epoch = state.epoch;
      result.best = params;
      result.best_epoch = state.epoch;
      result.best_val_loss = val.loss;
      if (options.out_dir) write_checkpoint(params, *options.out_dir / "best.pmck");
    }
    if (options.on_epoch) options.on_epoch(rec);
    plateau_scheduler(val.loss, state, config);
    if (state.epoch >= config.max_epochs) break;
    if (state.epoch >= config.min_epochs && state.lr < config.lr_floor) break;
  }

  result.history = state.history;
  write_outputs();
  return result;
}

}  // namespace cloudmask
