#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cloudmask/scene.hpp"
#include "cloudmask/tensor.hpp"

namespace cloudmask {

inline constexpr std::size_t kPatchExtent = 15;
inline constexpr std::size_t kPatchRadius = kPatchExtent / 2;

enum class Split : std::uint8_t { kTrain, kVal, kTest };

std::string_view split_name(Split s);
Split parse_split(std::string_view s);
std::string_view label_name(MaskLabel l);
MaskLabel parse_label(std::string_view s);

struct Center {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Center&, const Center&) = default;
};

struct PatchRef {
  std::string scene_id;
  std::size_t row = 0;
  std::size_t col = 0;
  Split split = Split::kTrain;
  MaskLabel label = MaskLabel::kClear;
  friend bool operator==(const PatchRef&, const PatchRef&) = default;
};

// Centres whose full window lies inside the scene and contains no nodata
// pixel, in row-major order.
std::vector<Center> enumerate_valid(const BandStack& scene,
                                    std::size_t extent = kPatchExtent);
std::vector<Center> enumerate_valid(std::span<const std::uint8_t> nodata,
                                    std::size_t width, std::size_t height,
                                    std::size_t extent = kPatchExtent);

// Window in bounds and nodata-free.
bool window_is_valid(const BandStack& scene, std::size_t row, std::size_t col,
                     std::size_t extent = kPatchExtent);

// 2x2 partition of a scene. Quadrants are numbered 0 = top-left,
// 1 = top-right, 2 = bottom-left, 3 = bottom-right; on odd extents the first
// half takes the extra row or column.
struct GridAssignment {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t row_split = 0;  // first row of the bottom half
  std::size_t col_split = 0;  // first column of the right half
  int val_quadrant = 0;

  int quadrant_of(std::size_t row, std::size_t col) const {
    return (row >= row_split ? 2 : 0) + (col >= col_split ? 1 : 0);
  }
  std::size_t quadrant_rows(int q) const { return q < 2 ? row_split : height - row_split; }
  std::size_t quadrant_cols(int q) const { return q % 2 == 0 ? col_split : width - col_split; }
  // Window of a centre in this quadrant stays inside the quadrant.
  bool window_inside_quadrant(std::size_t row, std::size_t col,
                              std::size_t radius = kPatchRadius) const;
};

// Needs at least 30x30; the validation quadrant is uniform on {0..3}.
GridAssignment grid_split(std::size_t height, std::size_t width, std::uint64_t seed);

struct SceneSampling {
  std::string scene_id;
  std::optional<GridAssignment> grid;    // absent for whole-scene assignment
  std::optional<Split> whole_scene;      // every patch of the scene gets this split
  std::array<std::size_t, 4> available{};  // eligible centres per quadrant (or [0] for whole scene)
  std::array<std::size_t, 4> shortfall{};
};

struct SampleSet {
  std::uint64_t seed = 0;
  std::size_t quota = 0;
  std::vector<SceneSampling> scenes;
  std::vector<PatchRef> patches;

  std::size_t count(Split s) const;
  // Appends another set's scenes and patches (seeds and quotas must agree).
  void append(const SampleSet& other);
};

struct SampleOptions {
  std::string scene_id = "scene";
  std::size_t quota = 10000;
  std::uint64_t seed = 0;
  // Exclude centres whose window crosses a grid line.
  bool strict = false;
  // When set, skip the grid and draw `quota` centres from the whole scene.
  std::optional<Split> whole_scene;
};

// Uniform draw without replacement of quota/4 centres per quadrant; the
// validation quadrant comes from grid_split. Quadrants with too few eligible
// centres contribute all of them and record the shortfall. Centres whose
// truth label is nodata are not eligible.
SampleSet subsample(const BandStack& scene, const MaskRaster& truth,
                    const SampleOptions& options);

// Channel-major [C,15,15] copy of the window around (row, col) for the given
// band indices.
Tensor extract(const BandStack& scene, std::size_t row, std::size_t col,
               std::span<const std::size_t> band_indices);
void extract_into(const BandStack& scene, std::size_t row, std::size_t col,
                  std::span<const std::size_t> band_indices, double* dst);

// Scene band indices feeding a network's input channels: the named bands in
// order, or every scene band when `names` is empty. ConfigError when a band is
// missing or the count differs from `channels`.
std::vector<std::size_t> resolve_input_bands(const BandStack& scene,
                                             std::span<const std::string> names,
                                             std::size_t channels);

// Line-oriented manifest for audit and replay.
std::string format_manifest(const SampleSet& set);
SampleSet parse_manifest(const std::string& text);
void write_manifest(const SampleSet& set, const std::filesystem::path& path);
SampleSet read_manifest(const std::filesystem::path& path);

}  // namespace cloudmask
