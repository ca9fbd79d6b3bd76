#include "cloudmask/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cloudmask/errors.hpp"
#include "cloudmask/ops.hpp"

namespace cloudmask {

namespace {

// Typical clear-sky surface reflectance and cloud-top reflectance per band.
struct BandDefaults {
  double surface;
  double cloud_top;
};

BandDefaults band_defaults(BandId b) {
  switch (b) {
    case BandId::kUltraBlue: return {0.08, 0.82};
    case BandId::kBlue: return {0.09, 0.80};
    case BandId::kGreen: return {0.12, 0.78};
    case BandId::kRed: return {0.14, 0.77};
    case BandId::kNir: return {0.30, 0.80};
    case BandId::kSwir1: return {0.25, 0.60};
    case BandId::kSwir2: return {0.18, 0.45};
  }
  return {0.1, 0.7};
}

double lens_area(double s) {
  if (s >= 2.0) return 0.0;
  return 2.0 * std::acos(s / 2.0) - (s / 2.0) * std::sqrt(4.0 - s * s);
}

struct Ellipse {
  double row, col;  // centre
  double a, b;      // semi-axes
  double cos_t, sin_t;
  double intensity;
};

template <class Fn>
void rasterize(const Ellipse& e, double d_row, double d_col, std::size_t w,
               std::size_t h, Fn&& fn) {
  const double cr = e.row + d_row;
  const double cc = e.col + d_col;
  const double reach = std::max(e.a, e.b);
  const auto r0 = static_cast<long>(std::floor(cr - reach));
  const auto r1 = static_cast<long>(std::ceil(cr + reach));
  const auto c0 = static_cast<long>(std::floor(cc - reach));
  const auto c1 = static_cast<long>(std::ceil(cc + reach));
  const auto hl = static_cast<long>(h);
  const auto wl = static_cast<long>(w);
  for (long r = r0; r <= r1; ++r) {
    for (long c = c0; c <= c1; ++c) {
      const double dr = r - cr;
      const double dc = c - cc;
      const double u = (dc * e.cos_t + dr * e.sin_t) / e.a;
      const double v = (-dc * e.sin_t + dr * e.cos_t) / e.b;
      if (u * u + v * v > 1.0) continue;
      const auto rr = static_cast<std::size_t>(((r % hl) + hl) % hl);
      const auto cw = static_cast<std::size_t>(((c % wl) + wl) % wl);
      fn(rr, cw);
    }
  }
}

}  // namespace

std::vector<BandProfile> default_background(std::span<const BandId> bands) {
  std::vector<BandProfile> out;
  for (BandId b : bands) out.push_back({band_defaults(b).surface, 0.01});
  return out;
}

void SynthSpec::validate() const {
  if (width < 15 || height < 15) throw ConfigError("synthetic scenes must be at least 15x15");
  if (bands.empty()) throw ConfigError("synthetic scene needs at least one band");
  if (!background.empty() && background.size() != bands.size()) {
    throw ConfigError("background profile count differs from band count");
  }
  for (const auto& p : background) {
    if (p.noise < 0.0) throw ConfigError("background noise must be nonnegative");
  }
  const double vals[] = {texture_amplitude,   cloud_count_mean,   cloud_axis_min,
                         cloud_axis_max,      cloud_intensity_min, cloud_intensity_max,
                         shadow_darkening};
  for (double v : vals) {
    if (!(v >= 0.0)) throw ConfigError("synthetic distribution parameters must be nonnegative");
  }
  if (cloud_axis_min > cloud_axis_max || cloud_intensity_min > cloud_intensity_max) {
    throw ConfigError("distribution ranges must have min <= max");
  }
  if (cloud_axis_min <= 0.0) throw ConfigError("cloud axes must be positive");
  if (2.0 * cloud_axis_max >= static_cast<double>(std::min(width, height))) {
    throw ConfigError("cloud axes must stay below half the scene extent");
  }
  if (shadow_darkening > 1.0) throw ConfigError("shadow darkening must not exceed 1");
  if (2 * nodata_border >= std::min(width, height)) {
    throw ConfigError("nodata border leaves no valid pixels");
  }
}

double SynthSpec::expected_coverage() const {
  validate();
  constexpr int kAxisSteps = 32;
  constexpr int kAngleSteps = 64;
  const double dist = std::hypot(shadow_offset_row, shadow_offset_col);
  const double phi = std::atan2(shadow_offset_row, shadow_offset_col);
  double total = 0.0;
  for (int i = 0; i < kAxisSteps; ++i) {
    const double a = cloud_axis_min + (cloud_axis_max - cloud_axis_min) * (i + 0.5) / kAxisSteps;
    for (int j = 0; j < kAxisSteps; ++j) {
      const double b = cloud_axis_min + (cloud_axis_max - cloud_axis_min) * (j + 0.5) / kAxisSteps;
      for (int k = 0; k < kAngleSteps; ++k) {
        const double t = std::numbers::pi * (k + 0.5) / kAngleSteps;
        // Offset expressed in the ellipse's normalized frame.
        const double u = dist * std::cos(phi - t) / a;
        const double v = dist * std::sin(phi - t) / b;
        total += a * b * (2.0 * std::numbers::pi - lens_area(std::hypot(u, v)));
      }
    }
  }
  const double mean_area = total / (kAxisSteps * kAxisSteps * kAngleSteps);
  const double scene_area = static_cast<double>(width * height);
  return 1.0 - std::exp(-cloud_count_mean * mean_area / scene_area);
}

SyntheticScene generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const std::size_t w = spec.width;
  const std::size_t h = spec.height;
  const std::size_t n = w * h;
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::vector<BandProfile> profiles =
      spec.background.empty() ? default_background(spec.bands) : spec.background;

  // Smooth background texture shared across bands.
  std::vector<double> texture(n, 0.0);
  for (int k = 0; k < 3; ++k) {
    const double fr = (1.0 + 3.0 * unit(rng)) / static_cast<double>(h);
    const double fc = (1.0 + 3.0 * unit(rng)) / static_cast<double>(w);
    const double ph = 2.0 * std::numbers::pi * unit(rng);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        texture[r * w + c] += std::sin(2.0 * std::numbers::pi * (fr * r + fc * c) + ph) / 3.0;
      }
    }
  }

  std::poisson_distribution<int> count_dist(spec.cloud_count_mean);
  const int count = spec.cloud_count_mean > 0.0 ? count_dist(rng) : 0;
  std::vector<Ellipse> clouds;
  for (int i = 0; i < count; ++i) {
    Ellipse e{};
    e.row = unit(rng) * static_cast<double>(h);
    e.col = unit(rng) * static_cast<double>(w);
    e.a = spec.cloud_axis_min + (spec.cloud_axis_max - spec.cloud_axis_min) * unit(rng);
    e.b = spec.cloud_axis_min + (spec.cloud_axis_max - spec.cloud_axis_min) * unit(rng);
    const double t = std::numbers::pi * unit(rng);
    e.cos_t = std::cos(t);
    e.sin_t = std::sin(t);
    e.intensity = spec.cloud_intensity_min +
                  (spec.cloud_intensity_max - spec.cloud_intensity_min) * unit(rng);
    clouds.push_back(e);
  }

  // Strongest cloud covering each pixel, and shadow coverage.
  std::vector<double> cloud_alpha(n, -1.0);
  std::vector<std::uint8_t> shadow(n, 0);
  for (const Ellipse& e : clouds) {
    rasterize(e, 0.0, 0.0, w, h, [&](std::size_t r, std::size_t c) {
      double& a = cloud_alpha[r * w + c];
      a = std::max(a, e.intensity);
    });
    rasterize(e, spec.shadow_offset_row, spec.shadow_offset_col, w, h,
              [&](std::size_t r, std::size_t c) { shadow[r * w + c] = 1; });
  }

  SyntheticScene out;
  out.scene = BandStack(w, h, spec.bands);
  out.raw_classes = Plane<std::uint8_t>(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = i / w;
    const std::size_t c = i % w;
    const bool border = r < spec.nodata_border || c < spec.nodata_border ||
                        r >= h - spec.nodata_border || c >= w - spec.nodata_border;
    RawClass cls = RawClass::kClear;
    if (border) cls = RawClass::kNodata;
    else if (cloud_alpha[i] >= 0.0) cls = RawClass::kCloud;
    else if (shadow[i]) cls = RawClass::kShadow;
    out.raw_classes.data[i] = static_cast<std::uint8_t>(cls);
    out.scene.nodata[i] = border ? 1 : 0;
  }
  for (std::size_t b = 0; b < spec.bands.size(); ++b) {
    std::normal_distribution<double> noise(0.0, profiles[b].noise);
    const double top = band_defaults(spec.bands[b]).cloud_top;
    auto& plane = out.scene.planes[b];
    for (std::size_t i = 0; i < n; ++i) {
      const double jitter = profiles[b].noise > 0.0 ? noise(rng) : 0.0;
      if (out.scene.nodata[i]) continue;
      double v = profiles[b].mean + spec.texture_amplitude * texture[i];
      const auto cls = static_cast<RawClass>(out.raw_classes.data[i]);
      if (cls == RawClass::kCloud) {
        v += cloud_alpha[i] * (top - v);
      } else if (cls == RawClass::kShadow) {
        v *= 1.0 - spec.shadow_darkening;
      }
      v += jitter;
      plane[i] = static_cast<float>(std::clamp(v, kReflectanceMin, kReflectanceMax));
    }
  }
  out.truth = binarize_labels(out.raw_classes);
  return out;
}

}  // namespace cloudmask
