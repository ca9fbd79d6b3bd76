#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cloudmask {

// One array of a differentiable function: its current values (perturbed in
// place by the checker) and the analytic gradient computed at those values.
struct CheckedArray {
  std::string layer;
  std::span<double> values;
  std::span<const double> gradient;
};

// A scalar function of a set of arrays with analytic gradients.
class Differentiable {
 public:
  virtual ~Differentiable() = default;
  virtual double evaluate() = 0;
  // Recomputes analytic gradients at the current values. Returned spans stay
  // valid until the next call.
  virtual std::vector<CheckedArray> gradients() = 0;
  // Identifies which side of every non-differentiable point (ReLU hinge)
  // the last evaluate() landed on; 0 when the function does not track it.
  virtual std::uint64_t kink_signature() const { return 0; }
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Relative errors are |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  std::size_t min_samples = 200;
  std::uint64_t seed = 1;
};

struct GradCheckEntry {
  std::string layer;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::string worst_layer;
  std::size_t checked = 0;
  // Entries whose +/- step evaluations crossed a hinge. Central differences
  // are not a valid oracle there, so they are replaced by fresh draws.
  std::size_t skipped_kinks = 0;
  std::vector<GradCheckEntry> failures;
};

// Central finite differences over a random subset of entries (every array is
// sampled at least min(3, size) times; at least min_samples overall).
// Entries straddling a hinge are redrawn from the same array.
GradCheckReport gradient_check(Differentiable& f, const GradCheckOptions& opts);

}  // namespace cloudmask
