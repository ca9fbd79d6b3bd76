#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cloudmask/gradcheck.hpp"
#include "cloudmask/scene.hpp"
#include "cloudmask/tensor.hpp"

namespace testing {

using cloudmask::Tensor;

inline Tensor random_tensor(Tensor::Shape shape, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Differentiable built from closures over a fixed list of tensors.
class LambdaFunction : public cloudmask::Differentiable {
 public:
  using Eval = std::function<double()>;
  using Grads = std::function<std::vector<std::vector<double>>()>;

  LambdaFunction(std::vector<std::pair<std::string, Tensor*>> arrays, Eval eval, Grads grads)
      : arrays_(std::move(arrays)), eval_(std::move(eval)), grads_(std::move(grads)) {}

  double evaluate() override { return eval_(); }

  std::vector<cloudmask::CheckedArray> gradients() override {
    last_ = grads_();
    std::vector<cloudmask::CheckedArray> out;
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
      out.push_back({arrays_[i].first, arrays_[i].second->data(), last_[i]});
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor*>> arrays_;
  Eval eval_;
  Grads grads_;
  std::vector<std::vector<double>> last_;
};

// Random scene with values in [0,1) and a given nodata probability.
inline cloudmask::BandStack random_scene(std::size_t w, std::size_t h, std::uint64_t seed,
                                         double nodata_p = 0.0,
                                         std::vector<cloudmask::BandId> bands = {
                                             std::begin(cloudmask::kAllBands),
                                             std::end(cloudmask::kAllBands)}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  cloudmask::BandStack s(w, h, std::move(bands));
  for (auto& plane : s.planes) {
    for (float& v : plane) v = u(rng);
  }
  std::bernoulli_distribution nd(nodata_p);
  for (auto& n : s.nodata) n = nd(rng) ? 1 : 0;
  return s;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const char* root = std::getenv("CLOUDMASK_TEST_TMP");
  std::filesystem::path base = root ? std::filesystem::path(root)
                                    : std::filesystem::temp_directory_path() / "cloudmask_tests";
  auto dir = base / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
