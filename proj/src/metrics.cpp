#include "cloudmask/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "cloudmask/errors.hpp"
#include "json.hpp"

namespace cloudmask {

Confusion confusion(const MaskRaster& pred, const MaskRaster& truth) {
  if (pred.width != truth.width || pred.height != truth.height ||
      pred.labels.size() != truth.labels.size()) {
    throw ContractViolation("confusion: mask dimensions differ");
  }
  Confusion c;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const MaskLabel p = pred.labels[i];
    const MaskLabel t = truth.labels[i];
    if (p == MaskLabel::kNodata || t == MaskLabel::kNodata) continue;
    const bool pp = p == MaskLabel::kCloudShadow;
    const bool tp = t == MaskLabel::kCloudShadow;
    if (pp && tp) ++c.tp;
    else if (pp) ++c.fp;
    else if (tp) ++c.fn;
    else ++c.tn;
  }
  if (c.total() == 0) throw DataError("confusion: masks share no valid pixel");
  return c;
}

std::optional<double> auroc(std::span<const double> scores,
                            std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) {
    throw ContractViolation("auroc: score and label counts differ");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0;
  double rank_sum = 0.0;  // 1-based average ranks of positives
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        pos += 1.0;
        rank_sum += avg_rank;
      }
    }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) {
    throw ContractViolation("average_precision: score and label counts differ");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!positive[order[k]]) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(k + 1);
  }
  if (hits == 0.0) return std::nullopt;
  return sum / hits;
}

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> harmonic(const std::optional<double>& p,
                               const std::optional<double>& r) {
  if (!p || !r) return std::nullopt;
  if (*p + *r == 0.0) return 0.0;
  return 2.0 * *p * *r / (*p + *r);
}

void fill_rates(MetricsReport& m) {
  const Confusion& c = m.counts;
  m.evaluated = c.total();
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.cloud.precision = ratio(c.tp, c.tp + c.fp);
  m.cloud.recall = ratio(c.tp, c.tp + c.fn);
  m.cloud.f1 = harmonic(m.cloud.precision, m.cloud.recall);
  m.clear.precision = ratio(c.tn, c.tn + c.fn);
  m.clear.recall = ratio(c.tn, c.tn + c.fp);
  m.clear.f1 = harmonic(m.clear.precision, m.clear.recall);
  if (!m.cloud.precision) m.notes.push_back("precision_cloud: no predicted cloud_shadow pixels");
  if (!m.cloud.recall) m.notes.push_back("recall_cloud: no cloud_shadow pixels in truth");
  if (!m.clear.precision) m.notes.push_back("precision_clear: no predicted clear pixels");
  if (!m.clear.recall) m.notes.push_back("recall_clear: no clear pixels in truth");
}

}  // namespace

MetricsReport report_from_counts(const Confusion& counts) {
  MetricsReport m;
  m.counts = counts;
  fill_rates(m);
  return m;
}

MetricsReport evaluate(const MaskRaster& pred, const MaskRaster& truth) {
  MetricsReport m = report_from_counts(confusion(pred, truth));
  if (pred.confidence) {
    std::vector<double> scores;
    std::vector<std::uint8_t> pos;
    scores.reserve(m.evaluated);
    pos.reserve(m.evaluated);
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
      if (pred.labels[i] == MaskLabel::kNodata || truth.labels[i] == MaskLabel::kNodata) continue;
      scores.push_back((*pred.confidence)[i]);
      pos.push_back(truth.labels[i] == MaskLabel::kCloudShadow ? 1 : 0);
    }
    m.auroc = auroc(scores, pos);
    m.ap = average_precision(scores, pos);
    if (!m.auroc) m.notes.push_back("auroc: truth contains a single class");
    if (!m.ap) m.notes.push_back("ap: truth contains no cloud_shadow pixels");
  } else {
    m.notes.push_back("auroc/ap: prediction carries no confidence plane");
  }
  return m;
}

MetricsReport aggregate(std::span<const MetricsReport> reports, Averaging mode) {
  if (reports.empty()) throw ContractViolation("aggregate: no reports");
  if (reports.size() == 1) return reports.front();
  MetricsReport out;
  out.scenes = 0;
  for (const auto& r : reports) {
    out.counts.tp += r.counts.tp;
    out.counts.fp += r.counts.fp;
    out.counts.tn += r.counts.tn;
    out.counts.fn += r.counts.fn;
    out.scenes += r.scenes;
  }
  auto mean = [&](auto field, bool weighted) -> std::optional<double> {
    double sum = 0.0;
    double weight = 0.0;
    for (const auto& r : reports) {
      const std::optional<double>& v = field(r);
      if (!v) continue;
      const double w = weighted ? static_cast<double>(r.evaluated) : 1.0;
      sum += w * *v;
      weight += w;
    }
    if (weight == 0.0) return std::nullopt;
    return sum / weight;
  };
  if (mode == Averaging::kMicro) {
    fill_rates(out);
    out.auroc = mean([](const MetricsReport& r) -> const auto& { return r.auroc; }, true);
    out.ap = mean([](const MetricsReport& r) -> const auto& { return r.ap; }, true);
    return out;
  }
  out.evaluated = out.counts.total();
  out.accuracy = mean([](const MetricsReport& r) -> const auto& { return r.accuracy; }, false);
  out.clear.precision = mean([](const MetricsReport& r) -> const auto& { return r.clear.precision; }, false);
  out.clear.recall = mean([](const MetricsReport& r) -> const auto& { return r.clear.recall; }, false);
  out.clear.f1 = mean([](const MetricsReport& r) -> const auto& { return r.clear.f1; }, false);
  out.cloud.precision = mean([](const MetricsReport& r) -> const auto& { return r.cloud.precision; }, false);
  out.cloud.recall = mean([](const MetricsReport& r) -> const auto& { return r.cloud.recall; }, false);
  out.cloud.f1 = mean([](const MetricsReport& r) -> const auto& { return r.cloud.f1; }, false);
  out.auroc = mean([](const MetricsReport& r) -> const auto& { return r.auroc; }, false);
  out.ap = mean([](const MetricsReport& r) -> const auto& { return r.ap; }, false);
  return out;
}

namespace {

std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * *v);
  return buf;
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::string format_table(std::span<const std::pair<std::string, MetricsReport>> rows) {
  static const char* headers[] = {"", "Accuracy", "Precision Clear", "Precision Cloud",
                                  "Recall Clear", "Recall Cloud", "F1 Clear",
                                  "F1 Cloud", "AUROC", "AP"};
  std::vector<std::vector<std::string>> cells;
  cells.emplace_back(std::begin(headers), std::end(headers));
  for (const auto& [name, r] : rows) {
    cells.push_back({name, pct(r.accuracy), pct(r.clear.precision), pct(r.cloud.precision),
                     pct(r.clear.recall), pct(r.cloud.recall), pct(r.clear.f1),
                     pct(r.cloud.f1), pct(r.auroc), pct(r.ap)});
  }
  std::vector<std::size_t> widths(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      std::string cell = cells[r][i];
      cell.insert(i == 0 ? cell.size() : 0, widths[i] - cell.size(), ' ');
      out += (i ? " | " : "") + cell;
    }
    out += '\n';
    if (r == 0) {
      for (std::size_t i = 0; i < widths.size(); ++i) {
        out += (i ? "-+-" : "") + std::string(widths[i], '-');
      }
      out += '\n';
    }
  }
  return out;
}

std::string to_json(const MetricsReport& r, int indent) {
  nlohmann::json j;
  j["counts"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}};
  j["evaluated"] = r.evaluated;
  j["scenes"] = r.scenes;
  j["accuracy"] = opt(r.accuracy);
  j["precision_clear"] = opt(r.clear.precision);
  j["recall_clear"] = opt(r.clear.recall);
  j["f1_clear"] = opt(r.clear.f1);
  j["precision_cloud"] = opt(r.cloud.precision);
  j["recall_cloud"] = opt(r.cloud.recall);
  j["f1_cloud"] = opt(r.cloud.f1);
  j["auroc"] = opt(r.auroc);
  j["ap"] = opt(r.ap);
  j["notes"] = r.notes;
  return j.dump(indent);
}

}  // namespace cloudmask
