#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cloudmask/scene.hpp"

namespace cloudmask {

// 8-bit RGB, row-major, interleaved.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

inline constexpr std::uint8_t kClearGray = 128;
inline constexpr std::uint8_t kCloudWhite = 255;
inline constexpr std::uint8_t kNodataBlack = 0;

// Gray = clear, white = cloud_shadow, black = nodata.
RgbImage mask_image(const MaskRaster& mask);

// True-color composite from red/green/blue, each band linearly stretched
// between its low and high percentiles over valid pixels. Nodata is black.
// ConfigError when one of the three bands is missing.
RgbImage composite_image(const BandStack& scene, double low_percentile = 2.0,
                         double high_percentile = 98.0);

void write_png(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_png(const std::filesystem::path& path);

// Writes <prefix>_mask.png and, when a scene is given, <prefix>_rgb.png.
std::vector<std::filesystem::path> render_png(const MaskRaster& mask,
                                              const BandStack* scene,
                                              const std::filesystem::path& prefix);

}  // namespace cloudmask
