#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cloudmask/resnet.hpp"
#include "cloudmask/scene.hpp"

namespace cloudmask {

struct InferenceConfig {
  double threshold = 0.5;
  // Band names in network input order; empty means the checkpoint's own list
  // (or every scene band when the checkpoint records none).
  std::vector<std::string> bands;
  // Centres per forward batch.
  std::size_t tile_size = 256;
  std::size_t threads = 1;

  void validate() const;
};

// Throws ConfigError unless 0 < threshold < 1.
void check_threshold(double threshold);

// Slides the classifier over every centre whose 15x15 window is nodata-free.
// Those pixels get the cloud/shadow probability (stored as float32) and the
// label confidence >= threshold ? cloud_shadow : clear; every other pixel is
// nodata with NaN confidence. Results do not depend on threads or tile size.
MaskRaster infer_scene(const BandStack& scene, const ParameterSet& params,
                       const InferenceConfig& config = {});
MaskRaster infer_scene(const BandStack& scene, const std::filesystem::path& checkpoint,
                       const InferenceConfig& config = {});

// Relabels from the stored confidence plane; NaN stays nodata. DataError if
// the mask has no confidence plane or a confidence lies outside [0,1].
MaskRaster apply_threshold(const MaskRaster& mask, double threshold);

}  // namespace cloudmask
