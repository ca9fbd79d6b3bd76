#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cloudmask/scene.hpp"

namespace cloudmask {

// Pixel counts with cloud_shadow as the positive class.
struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Counts pixels labeled in both masks. Throws ContractViolation on a size
// mismatch and DataError when no pixel is co-valid.
Confusion confusion(const MaskRaster& pred, const MaskRaster& truth);

// Rank statistic P(score_pos > score_neg) + 0.5 P(tie). Absent unless both
// classes occur. `positive` holds 0/1.
std::optional<double> auroc(std::span<const double> scores,
                            std::span<const std::uint8_t> positive);

// Non-interpolated AP: mean over positives of precision at that positive's
// rank; ranking by descending score, ties broken by ascending index. Absent
// without positives.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> positive);

struct ClassScores {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

struct MetricsReport {
  Confusion counts;
  std::uint64_t evaluated = 0;
  std::optional<double> accuracy;
  ClassScores clear;
  ClassScores cloud;
  std::optional<double> auroc;
  std::optional<double> ap;
  std::size_t scenes = 1;
  // Reasons for absent values, e.g. "precision_cloud: no predicted positives".
  std::vector<std::string> notes;
};

MetricsReport report_from_counts(const Confusion& counts);

// Confusion-derived metrics plus AUROC/AP when `pred` carries confidences.
MetricsReport evaluate(const MaskRaster& pred, const MaskRaster& truth);

enum class Averaging { kMacro, kMicro };

// Macro: unweighted mean of each metric over the reports that define it.
// Micro: metrics recomputed from summed counts; AUROC and AP become
// pixel-weighted means since per-pixel scores are not retained.
MetricsReport aggregate(std::span<const MetricsReport> reports,
                        Averaging mode = Averaging::kMacro);

// Human-readable table with one row per (name, report).
std::string format_table(std::span<const std::pair<std::string, MetricsReport>> rows);
// One JSON object per report.
std::string to_json(const MetricsReport& report, int indent = 2);

}  // namespace cloudmask
