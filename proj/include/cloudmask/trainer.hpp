#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cloudmask/resnet.hpp"
#include "cloudmask/sampler.hpp"
#include "cloudmask/scene.hpp"

namespace cloudmask {

struct TrainConfig {
  std::size_t batch_size = 256;
  double lr_initial = 0.1;
  double lr_decay_factor = 10.0;
  int plateau_patience = 10;
  double plateau_min_delta = 1e-4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double dropout_keep = 0.5;
  int max_epochs = 120;
  int min_epochs = 80;
  // Training stops after min_epochs once lr falls below this.
  double lr_floor = 1e-5;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainState {
  int epoch = 0;
  int lr_decays = 0;  // lr = lr_initial / lr_decay_factor^lr_decays
  double lr = 0.0;
  ParameterSet velocity;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  // Plateau tracking, reset on every decay.
  double plateau_best = std::numeric_limits<double>::infinity();
  int plateau_wait = 0;
  Rng rng;
  std::vector<EpochRecord> history;

  static TrainState start(const ParameterSet& params, const TrainConfig& config);
};

// Nesterov update with coupled L2 decay on every learnable array:
//   d = g + wd * theta;  v = mu * v - lr * d;  theta += mu * v - lr * d.
// Throws DataError if any gradient is non-finite; parameters are then
// untouched.
void sgd_nesterov_step(ParameterSet& params, const ParameterSet& grads,
                       TrainState& state, const TrainConfig& config);

// Feeds one epoch's validation loss. Returns true when the learning rate was
// divided by lr_decay_factor.
bool plateau_scheduler(double val_loss, TrainState& state, const TrainConfig& config);

// Batch sizes of one epoch. A trailing batch of one is merged into the
// previous batch because batch statistics need two samples.
std::vector<std::size_t> epoch_batches(std::size_t samples, std::size_t batch_size);

using SceneLookup = std::map<std::string, const BandStack*>;

struct TrainOptions {
  // When set: best.pmck, history.csv and run.json are written here.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ParameterSet best;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool aborted = false;
  std::string abort_reason;
};

// Epoch loop over the sample set's train patches with validation after every
// epoch. Input bands follow network.input_bands, or the scene's own order
// when that list is empty.
TrainResult train(const SampleSet& samples, const SceneLookup& scenes,
                  const NetworkConfig& network, const TrainConfig& config,
                  const TrainOptions& options = {});

// Validation pass in eval mode: mean clamped cross entropy and accuracy.
struct EvalSummary {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};
EvalSummary evaluate_patches(const ParameterSet& params,
                             const std::vector<PatchRef>& patches,
                             const SceneLookup& scenes, std::size_t batch_size = 256);

std::string format_history_csv(const std::vector<EpochRecord>& history);

}  // namespace cloudmask
