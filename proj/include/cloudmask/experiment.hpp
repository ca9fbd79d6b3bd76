#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cloudmask/inference.hpp"
#include "cloudmask/metrics.hpp"
#include "cloudmask/resnet.hpp"
#include "cloudmask/scene.hpp"
#include "cloudmask/trainer.hpp"

namespace cloudmask {

enum class ExperimentMode { kLandTypeSpecific, kAllLandType, kAblation };

std::string_view mode_name(ExperimentMode mode);
ExperimentMode parse_mode(std::string_view s);

struct SceneEntry {
  std::string id;
  std::string land_type;
  std::filesystem::path scene_path;  // PMBS
  std::filesystem::path truth_path;  // PMMR
};

// Text manifest, one scene per line: "id land_type scene.pmbs truth.pmmr".
// Relative paths resolve against the manifest's directory; '#' starts a
// comment.
std::vector<SceneEntry> parse_scene_manifest(const std::string& text,
                                             const std::filesystem::path& base = {});
std::vector<SceneEntry> read_scene_manifest(const std::filesystem::path& path);
std::string format_scene_manifest(const std::vector<SceneEntry>& scenes);

struct BandVariant {
  std::string name;
  std::vector<BandId> bands;
};

struct ExperimentSpec {
  ExperimentMode mode = ExperimentMode::kLandTypeSpecific;
  std::vector<SceneEntry> scenes;
  // Baseline input bands; empty means all bands of the first scene.
  std::vector<BandId> bands;
  // Ablation: when non-empty, only this drop variant runs beside the
  // baseline; otherwise every drop-one variant plus keep-{red,green,blue,nir}.
  std::vector<BandId> drop;
  TrainConfig train;
  NetworkConfig network;
  InferenceConfig inference;
  int repetitions = 5;
  std::uint64_t master_seed = 0;
  std::size_t quota = 10000;
  bool strict_grid = false;
  double val_scene_fraction = 0.2;
  Averaging averaging = Averaging::kMacro;
  // Leave-one-out fold indices to run (global, manifest order); empty = all.
  std::vector<std::size_t> only_folds;
  std::optional<std::filesystem::path> out_dir;
  // Keep predicted masks in the returned outcomes.
  bool keep_masks = true;
  std::function<void(const std::string& run, const EpochRecord&)> on_epoch;
  std::function<void(const std::string& message)> log;

  // Files exist, each land type has at least two scenes, repetitions >= 1.
  void validate() const;
};

// Derives independent child seeds from a parent.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

struct RunOutcome {
  std::string name;
  std::string land_type;              // empty for mixed runs
  std::vector<std::string> test_scenes;
  std::vector<std::string> train_scenes;
  std::vector<std::string> val_scenes;  // all-land-type pools
  std::uint64_t seed = 0;
  TrainResult training;
  std::vector<MetricsReport> scene_reports;  // one per test scene
  std::vector<MaskRaster> masks;             // when keep_masks
  std::optional<MetricsReport> report;       // aggregate over test scenes
  bool aborted = false;
  std::string reason;
};

struct ExperimentResult {
  std::vector<RunOutcome> runs;
  // Per land type (land-type-specific) or per variant (ablation).
  std::vector<std::pair<std::string, MetricsReport>> rows;
  std::optional<MetricsReport> overall;
  bool any_aborted = false;
  std::string table;
};

// Variants for the ablation table: baseline first.
std::vector<BandVariant> ablation_variants(const std::vector<BandId>& baseline,
                                           const std::vector<BandId>& drop);

ExperimentResult run_leave_one_out(const ExperimentSpec& spec);
ExperimentResult run_all_land_type(const ExperimentSpec& spec);
ExperimentResult run_ablation(const ExperimentSpec& spec);
ExperimentResult run_experiment(const ExperimentSpec& spec);

}  // namespace cloudmask
