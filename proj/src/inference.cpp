#include "cloudmask/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "cloudmask/checkpoint.hpp"
#include "cloudmask/errors.hpp"
#include "cloudmask/sampler.hpp"

namespace cloudmask {

void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold must lie strictly inside (0,1), got " +
                      std::to_string(threshold));
  }
}

void InferenceConfig::validate() const {
  check_threshold(threshold);
  if (tile_size == 0) throw ConfigError("tile_size must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
}

namespace {

MaskLabel label_for(float confidence, double threshold) {
  return static_cast<double>(confidence) >= threshold ? MaskLabel::kCloudShadow
                                                      : MaskLabel::kClear;
}

}  // namespace

MaskRaster infer_scene(const BandStack& scene, const ParameterSet& params,
                       const InferenceConfig& config) {
  config.validate();
  const NetworkConfig& net = params.config();
  if (!config.bands.empty() && !net.input_bands.empty() && config.bands != net.input_bands) {
    throw ConfigError("requested bands do not match the checkpoint's input bands");
  }
  const auto& names = config.bands.empty() ? net.input_bands : config.bands;
  const std::vector<std::size_t> bands =
      resolve_input_bands(scene, names, net.input_channels);
  const std::size_t extent = net.input_extent;

  const std::vector<Center> centres = enumerate_valid(scene, extent);
  MaskRaster mask(scene.width, scene.height, MaskLabel::kNodata);
  mask.confidence.emplace(scene.pixel_count(), std::numeric_limits<float>::quiet_NaN());
  if (centres.empty()) return mask;

  const std::size_t chunk = config.tile_size;
  const std::size_t chunks = (centres.size() + chunk - 1) / chunk;
  const std::size_t per = net.input_channels * extent * extent;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&] {
    try {
      for (std::size_t t = next++; t < chunks; t = next++) {
        const std::size_t begin = t * chunk;
        const std::size_t n = std::min(chunk, centres.size() - begin);
        Tensor batch({n, net.input_channels, extent, extent});
        for (std::size_t i = 0; i < n; ++i) {
          const Center& c = centres[begin + i];
          extract_into(scene, c.row, c.col, bands, batch.data().data() + i * per);
        }
        const Tensor probs = forward(params, batch);
        for (std::size_t i = 0; i < n; ++i) {
          const Center& c = centres[begin + i];
          const std::size_t px = c.row * scene.width + c.col;
          const auto conf = static_cast<float>(probs[i * 2 + 1]);
          (*mask.confidence)[px] = conf;
          mask.labels[px] = label_for(conf, config.threshold);
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
      next = chunks;
    }
  };

  const std::size_t workers = std::min(config.threads, chunks);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return mask;
}

MaskRaster infer_scene(const BandStack& scene, const std::filesystem::path& checkpoint,
                       const InferenceConfig& config) {
  return infer_scene(scene, read_checkpoint(checkpoint), config);
}

MaskRaster apply_threshold(const MaskRaster& mask, double threshold) {
  check_threshold(threshold);
  if (!mask.confidence) throw DataError("mask carries no confidence plane");
  const auto& conf = *mask.confidence;
  if (conf.size() != mask.labels.size()) {
    throw DataError("confidence plane size differs from the label plane");
  }
  MaskRaster out = mask;
  for (std::size_t i = 0; i < conf.size(); ++i) {
    const float c = conf[i];
    if (std::isnan(c)) {
      out.labels[i] = MaskLabel::kNodata;
      continue;
    }
    if (c < 0.0f || c > 1.0f) throw DataError("confidence outside [0,1]");
    out.labels[i] = label_for(c, threshold);
  }
  return out;
}

}  // namespace cloudmask
