#include "cloudmask/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <utility>

namespace cloudmask {

GradCheckReport gradient_check(Differentiable& f, const GradCheckOptions& opts) {
  GradCheckReport report;
  const std::vector<CheckedArray> arrays = f.gradients();
  // Analytic gradients are copied because evaluate() may recompute state.
  std::vector<std::vector<double>> analytic;
  std::size_t total = 0;
  for (const auto& a : arrays) {
    analytic.emplace_back(a.gradient.begin(), a.gradient.end());
    total += a.values.size();
  }

  std::mt19937_64 rng(opts.seed);
  std::set<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const std::size_t n = arrays[i].values.size();
    const std::size_t want = std::min<std::size_t>(3, n);
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    while (std::count_if(picks.begin(), picks.end(),
                         [i](const auto& p) { return p.first == i; }) <
           static_cast<std::ptrdiff_t>(want)) {
      picks.emplace(i, d(rng));
    }
  }
  const std::size_t target = std::min(total, std::max(opts.min_samples, picks.size()));
  std::uniform_int_distribution<std::size_t> flat(0, total - 1);
  while (picks.size() < target) {
    std::size_t g = flat(rng);
    std::size_t i = 0;
    while (g >= arrays[i].values.size()) g -= arrays[i++].values.size();
    picks.emplace(i, g);
  }

  const std::uint64_t base = (f.evaluate(), f.kink_signature());
  std::set<std::pair<std::size_t, std::size_t>> tried(picks.begin(), picks.end());
  std::vector<std::pair<std::size_t, std::size_t>> queue(picks.begin(), picks.end());
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const auto [ai, idx] = queue[q];
    double& v = arrays[ai].values[idx];
    const double saved = v;
    v = saved + opts.step;
    const double up = f.evaluate();
    const std::uint64_t sig_up = f.kink_signature();
    v = saved - opts.step;
    const double down = f.evaluate();
    const std::uint64_t sig_down = f.kink_signature();
    v = saved;
    if (sig_up != base || sig_down != base) {
      ++report.skipped_kinks;
      const std::size_t n = arrays[ai].values.size();
      std::uniform_int_distribution<std::size_t> d(0, n - 1);
      for (int attempt = 0; attempt < 64 && tried.size() < total; ++attempt) {
        const std::pair<std::size_t, std::size_t> next{ai, d(rng)};
        if (tried.insert(next).second) {
          queue.push_back(next);
          break;
        }
      }
      continue;
    }
    const double numeric = (up - down) / (2.0 * opts.step);
    const double a = analytic[ai][idx];
    const double denom = std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
    const double rel = std::abs(a - numeric) / denom;
    ++report.checked;
    if (rel > report.max_rel_error || !std::isfinite(rel)) {
      report.max_rel_error = rel;
      report.worst_layer = arrays[ai].layer;
    }
    if (!(rel <= opts.tolerance)) {
      report.passed = false;
      report.failures.push_back({arrays[ai].layer, idx, a, numeric, rel});
    }
  }
  return report;
}

}  // namespace cloudmask
