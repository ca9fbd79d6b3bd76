#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cloudmask {

enum class BandId : std::uint8_t {
  kUltraBlue,
  kBlue,
  kGreen,
  kRed,
  kNir,
  kSwir1,
  kSwir2,
};

inline constexpr BandId kAllBands[] = {BandId::kUltraBlue, BandId::kBlue,
                                       BandId::kGreen,     BandId::kRed,
                                       BandId::kNir,       BandId::kSwir1,
                                       BandId::kSwir2};

std::string_view band_name(BandId band);
// Accepts the identifiers used by band_name(); throws ConfigError otherwise.
BandId parse_band(std::string_view name);
// Comma-separated list, e.g. "red,green,blue,nir".
std::vector<BandId> parse_band_list(std::string_view list);
std::string format_band_list(std::span<const BandId> bands);

// Reflectance in unit scale. Integer surface reflectance is divided by
// kReflectanceScale on import; valid pixels must fall inside
// [kReflectanceMin, kReflectanceMax].
inline constexpr double kReflectanceScale = 10000.0;
inline constexpr double kReflectanceMin = -0.2;
inline constexpr double kReflectanceMax = 1.6;

// Row-major single-channel raster.
template <class T>
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, T fill = T{})
      : width(w), height(h), data(w * h, fill) {}

  T& at(std::size_t row, std::size_t col) { return data[row * width + col]; }
  const T& at(std::size_t row, std::size_t col) const {
    return data[row * width + col];
  }
  friend bool operator==(const Plane&, const Plane&) = default;
};

// 1 = valid, 0 = invalid.
using ValidityPlane = Plane<std::uint8_t>;

struct BandStack {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<BandId> bands;
  std::vector<std::vector<float>> planes;  // one row-major plane per band
  std::vector<std::uint8_t> nodata;        // 1 = invalid pixel
  double pixel_size_m = 30.0;

  BandStack() = default;
  BandStack(std::size_t w, std::size_t h, std::vector<BandId> ids);

  std::size_t pixel_count() const { return width * height; }
  std::optional<std::size_t> band_index(BandId band) const;
  // Index of each requested band; ConfigError when one is missing.
  std::vector<std::size_t> band_indices(std::span<const BandId> wanted) const;
  bool is_nodata(std::size_t row, std::size_t col) const {
    return nodata[row * width + col] != 0;
  }
  ValidityPlane validity() const;

  // Shapes agree, band ids are unique and every valid pixel is finite and
  // inside the reflectance range. Throws ContractViolation or DataError.
  void validate() const;

  friend bool operator==(const BandStack&, const BandStack&) = default;
};

enum class MaskLabel : std::uint8_t { kClear = 0, kCloudShadow = 1, kNodata = 255 };

struct MaskRaster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<MaskLabel> labels;
  // Cloud/shadow probability on labeled pixels, NaN on nodata pixels.
  std::optional<std::vector<float>> confidence;

  MaskRaster() = default;
  MaskRaster(std::size_t w, std::size_t h, MaskLabel fill = MaskLabel::kNodata)
      : width(w), height(h), labels(w * h, fill) {}

  MaskLabel at(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
  std::size_t count(MaskLabel label) const;
  void validate() const;

  friend bool operator==(const MaskRaster& a, const MaskRaster& b);
};

// Four-class reference labels before merging cloud and shadow.
enum class RawClass : std::uint8_t { kClear = 0, kCloud = 1, kShadow = 2, kNodata = 255 };

// Pixel valid iff valid in every plane.
ValidityPlane intersect_valid(std::span<const ValidityPlane> planes);

// Marks every pixel outside `valid` as nodata in the scene (bands) and mask.
void apply_validity(BandStack& scene, const ValidityPlane& valid);
void apply_validity(MaskRaster& mask, const ValidityPlane& valid);

// cloud and shadow -> cloud_shadow, clear -> clear, nodata kept. Unknown codes
// raise DataError.
MaskRaster binarize_labels(const Plane<std::uint8_t>& raw);

// --- PMBS / PMMR containers ------------------------------------------------

inline constexpr std::uint16_t kContainerVersion = 1;

std::vector<std::uint8_t> encode_bandstack(const BandStack& stack);
BandStack decode_bandstack(const std::vector<std::uint8_t>& bytes);
void write_bandstack(const BandStack& stack, const std::filesystem::path& path);
BandStack read_bandstack(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_mask(const MaskRaster& mask);
MaskRaster decode_mask(const std::vector<std::uint8_t>& bytes);
void write_mask(const MaskRaster& mask, const std::filesystem::path& path);
MaskRaster read_mask(const std::filesystem::path& path);

// --- Raw import --------------------------------------------------------------

// Sidecar text header ("key = value" lines, '#' comments) describing flat
// band-sequential binary planes:
//   kind         = bands | labels
//   width, height
//   bands        = blue,green,red,nir          (kind = bands)
//   data_type    = int16 | uint16 | float32 | uint8
//   scale        = 10000                       (reflectance divisor)
//   nodata_value = -9999                       (sentinel in any band)
//   data_file    = scene.raw                   (relative to the header)
//   class_codes  = clear:0,cloud:1,shadow:2,nodata:255   (kind = labels)
struct ImportHeader {
  std::string kind = "bands";
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<BandId> bands;
  std::string data_type = "int16";
  double scale = kReflectanceScale;
  std::optional<double> nodata_value;
  std::filesystem::path data_file;
  std::vector<std::pair<RawClass, int>> class_codes{
      {RawClass::kClear, 0}, {RawClass::kCloud, 1},
      {RawClass::kShadow, 2}, {RawClass::kNodata, 255}};
};

ImportHeader parse_import_header(const std::filesystem::path& header_path);
// Pixels matching the sentinel or falling outside the reflectance range after
// scaling become nodata.
BandStack import_bands(const ImportHeader& header);
MaskRaster import_labels(const ImportHeader& header);

}  // namespace cloudmask
