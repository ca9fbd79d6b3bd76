#include "cloudmask/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "cloudmask/errors.hpp"

namespace cloudmask {

RgbImage mask_image(const MaskRaster& mask) {
  RgbImage img{mask.width, mask.height, std::vector<std::uint8_t>(mask.labels.size() * 3)};
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    std::uint8_t v = kNodataBlack;
    if (mask.labels[i] == MaskLabel::kClear) v = kClearGray;
    else if (mask.labels[i] == MaskLabel::kCloudShadow) v = kCloudWhite;
    img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = v;
  }
  return img;
}

namespace {

double percentile(std::vector<float> values, double pct) {
  const auto k = static_cast<std::size_t>(
      std::floor(pct / 100.0 * static_cast<double>(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

RgbImage composite_image(const BandStack& scene, double low_percentile,
                         double high_percentile) {
  if (!(low_percentile >= 0 && low_percentile < high_percentile && high_percentile <= 100)) {
    throw ConfigError("invalid percentile stretch bounds");
  }
  const BandId rgb[] = {BandId::kRed, BandId::kGreen, BandId::kBlue};
  const std::vector<std::size_t> idx = scene.band_indices(rgb);
  RgbImage img{scene.width, scene.height,
               std::vector<std::uint8_t>(scene.pixel_count() * 3, 0)};
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& plane = scene.planes[idx[c]];
    std::vector<float> valid;
    valid.reserve(plane.size());
    for (std::size_t i = 0; i < plane.size(); ++i) {
      if (!scene.nodata[i]) valid.push_back(plane[i]);
    }
    if (valid.empty()) continue;
    const double lo = percentile(valid, low_percentile);
    const double hi = percentile(valid, high_percentile);
    const double span = hi - lo;
    for (std::size_t i = 0; i < plane.size(); ++i) {
      if (scene.nodata[i]) continue;
      const double t = span > 0 ? (plane[i] - lo) / span : 0.0;
      img.pixels[3 * i + c] =
          static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
  }
  return img;
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  if (image.width == 0 || image.height == 0 ||
      image.pixels.size() != image.width * image.height * 3) {
    throw ContractViolation("write_png: image buffer does not match its dimensions");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < image.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + r * image.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialisation failed");
  }
  RgbImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.pixels.resize(img.width * img.height * 3);
  for (std::size_t r = 0; r < img.height; ++r) {
    png_read_row(png, img.pixels.data() + r * img.width * 3, nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

std::vector<std::filesystem::path> render_png(const MaskRaster& mask,
                                              const BandStack* scene,
                                              const std::filesystem::path& prefix) {
  std::vector<std::filesystem::path> out;
  RgbImage rgb;
  if (scene) {
    if (scene->width != mask.width || scene->height != mask.height) {
      throw ConfigError("scene and mask dimensions differ");
    }
    rgb = composite_image(*scene);
  }
  out.push_back(prefix.string() + "_mask.png");
  write_png(mask_image(mask), out.back());
  if (scene) {
    out.push_back(prefix.string() + "_rgb.png");
    write_png(rgb, out.back());
  }
  return out;
}

}  // namespace cloudmask
