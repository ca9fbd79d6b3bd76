#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cloudmask/scene.hpp"

namespace cloudmask {

struct BandProfile {
  double mean = 0.1;
  double noise = 0.01;  // per-pixel Gaussian noise std
};

// Desk-scale synthetic scene description. Clouds are bright ellipses whose
// centres are uniform on the scene torus (footprints wrap at the edges); each
// casts a dark shadow of the same shape displaced by `shadow_offset`.
struct SynthSpec {
  std::size_t width = 256;
  std::size_t height = 256;
  std::uint64_t seed = 1;
  std::vector<BandId> bands{std::begin(kAllBands), std::end(kAllBands)};
  // One profile per band; empty selects default_background().
  std::vector<BandProfile> background;
  double texture_amplitude = 0.03;  // smooth low-frequency background variation

  double cloud_count_mean = 6.0;  // Poisson
  double cloud_axis_min = 8.0;    // semi-axes, uniform in [min, max] pixels
  double cloud_axis_max = 22.0;
  double cloud_intensity_min = 0.5;  // blend weight toward cloud-top reflectance
  double cloud_intensity_max = 0.95;
  double shadow_offset_row = 10.0;
  double shadow_offset_col = 14.0;
  double shadow_darkening = 0.55;  // fraction of background removed in shadow
  std::size_t nodata_border = 0;

  void validate() const;
  // Probability that a pixel is cloud or shadow, from the Boolean model of
  // Poisson-placed footprints: 1 - exp(-count * E[area] / (W H)), with the
  // expected union area of an ellipse and its displaced copy integrated
  // numerically over the axis and orientation distributions.
  double expected_coverage() const;
};

std::vector<BandProfile> default_background(std::span<const BandId> bands);

struct SyntheticScene {
  BandStack scene;
  MaskRaster truth;
  Plane<std::uint8_t> raw_classes;  // RawClass codes before merging
};

SyntheticScene generate_synthetic(const SynthSpec& spec);

}  // namespace cloudmask
