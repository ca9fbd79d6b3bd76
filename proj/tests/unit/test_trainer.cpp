#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cloudmask/checkpoint.hpp"
#include "cloudmask/errors.hpp"
#include "cloudmask/trainer.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using namespace cloudmask;

namespace {

NetworkConfig tiny(std::size_t channels = 1) {
  NetworkConfig c;
  c.depth_param = 1;
  c.stage_widths = {4, 8, 16};
  c.input_channels = channels;
  return c;
}

std::vector<double> flatten(const ParameterSet& p) {
  std::vector<double> out;
  p.for_each_learnable([&](const std::string&, std::span<const double> v) {
    out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

// Gradient of 0.5 * a * theta^2 per entry.
ParameterSet quadratic_grad(const ParameterSet& p, double a) {
  ParameterSet g = p.zeros_like();
  std::vector<std::span<const double>> src;
  p.for_each_learnable([&](const std::string&, std::span<const double> v) { src.push_back(v); });
  std::size_t k = 0;
  g.for_each_learnable([&](const std::string&, std::span<double> v) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * src[k][i];
    ++k;
  });
  return g;
}

// Bright scene labelled cloud and a dark scene labelled clear.
struct TwoBlobs {
  BandStack bright, dark;
  SampleSet samples;
  SceneLookup lookup;
};

TwoBlobs two_blobs(std::uint64_t seed) {
  TwoBlobs d;
  d.bright = testing::random_scene(48, 48, seed, 0.0, {BandId::kRed});
  d.dark = testing::random_scene(48, 48, seed + 1, 0.0, {BandId::kRed});
  for (float& v : d.bright.planes[0]) v = 0.7f + 0.2f * v;
  for (float& v : d.dark.planes[0]) v = 0.1f + 0.2f * v;
  SampleOptions opt;
  opt.quota = 400;
  opt.seed = seed;
  opt.scene_id = "bright";
  d.samples = subsample(d.bright, MaskRaster(48, 48, MaskLabel::kCloudShadow), opt);
  opt.scene_id = "dark";
  d.samples.append(subsample(d.dark, MaskRaster(48, 48, MaskLabel::kClear), opt));
  d.lookup = {{"bright", &d.bright}, {"dark", &d.dark}};
  return d;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.plateau_patience = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.min_epochs = 130;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lr_initial = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("nesterov step: zero gradient without decay changes nothing") {
  ParameterSet p = build(tiny(), 1);
  const ParameterSet before = p;
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  TrainState st = TrainState::start(p, cfg);
  sgd_nesterov_step(p, p.zeros_like(), st, cfg);
  CHECK(p == before);
}

TEST_CASE("nesterov step follows the update recurrence on a quadratic") {
  ParameterSet p = build(tiny(), 2);
  TrainConfig cfg;
  cfg.lr_initial = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.01;
  TrainState st = TrainState::start(p, cfg);
  std::vector<double> theta = flatten(p);
  std::vector<double> v(theta.size(), 0.0);
  const double a = 3.0;
  for (int step = 0; step < 3; ++step) {
    sgd_nesterov_step(p, quadratic_grad(p, a), st, cfg);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double d = a * theta[i] + 0.01 * theta[i];
      v[i] = 0.9 * v[i] - 0.05 * d;
      theta[i] = theta[i] + (0.9 * v[i] - 0.05 * d);
    }
  }
  CHECK(flatten(p) == theta);
  CHECK(flatten(st.velocity) == v);
}

TEST_CASE("zero momentum reduces to plain SGD") {
  ParameterSet p = build(tiny(), 3);
  TrainConfig cfg;
  cfg.momentum = 0.0;
  TrainState st = TrainState::start(p, cfg);
  const std::vector<double> t0 = flatten(p);
  sgd_nesterov_step(p, quadratic_grad(p, 2.0), st, cfg);
  const std::vector<double> t1 = flatten(p);
  for (std::size_t i = 0; i < t0.size(); ++i) {
    CHECK(t1[i] == doctest::Approx(t0[i] - 0.1 * (2.0 * t0[i] + 5e-4 * t0[i])).epsilon(1e-15));
  }
}

TEST_CASE("non-finite gradients abort without touching parameters") {
  ParameterSet p = build(tiny(), 4);
  const ParameterSet before = p;
  TrainConfig cfg;
  TrainState st = TrainState::start(p, cfg);
  ParameterSet g = p.zeros_like();
  g.at("classifier").weight[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(sgd_nesterov_step(p, g, st, cfg), DataError);
  CHECK(p == before);
}

TEST_CASE("weight decay alone shrinks every parameter norm monotonically") {
  ParameterSet p = build(tiny(), 5);
  TrainConfig cfg;
  cfg.weight_decay = 0.01;
  TrainState st = TrainState::start(p, cfg);
  auto norms = [](const ParameterSet& ps) {
    std::vector<double> n;
    ps.for_each_learnable([&](const std::string&, std::span<const double> v) {
      double s = 0.0;
      for (double x : v) s += x * x;
      n.push_back(s);
    });
    return n;
  };
  std::vector<double> prev = norms(p);
  const ParameterSet zero = p.zeros_like();
  for (int step = 0; step < 200; ++step) {
    sgd_nesterov_step(p, zero, st, cfg);
    const std::vector<double> cur = norms(p);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (prev[i] > 0) CHECK(cur[i] < prev[i]);
    }
    prev = cur;
  }
  CHECK(p.all_finite());
}

TEST_CASE("plateau scheduler") {
  TrainConfig cfg;
  ParameterSet p = build(tiny(), 6);
  {
    TrainState st = TrainState::start(p, cfg);
    for (int e = 0; e < 40; ++e) plateau_scheduler(1.0 - 0.01 * e, st, cfg);
    CHECK(st.lr == 0.1);
  }
  {
    TrainState st = TrainState::start(p, cfg);
    plateau_scheduler(0.5, st, cfg);
    for (int e = 0; e < 9; ++e) CHECK_FALSE(plateau_scheduler(0.5, st, cfg));
    CHECK(plateau_scheduler(0.5, st, cfg));
    CHECK(st.lr == doctest::Approx(0.01).epsilon(1e-15));
  }
  {
    // Scripted history: improvement, plateau, small noise below min_delta,
    // second plateau.
    std::vector<double> losses{0.9, 0.8, 0.7};
    for (int i = 0; i < 10; ++i) losses.push_back(0.7 + 0.00005 * (i % 2));
    losses.push_back(0.6);
    for (int i = 0; i < 10; ++i) losses.push_back(0.65);
    TrainState st = TrainState::start(p, cfg);
    std::vector<double> lrs;
    for (double l : losses) {
      plateau_scheduler(l, st, cfg);
      lrs.push_back(st.lr);
    }
    CHECK(lrs[11] == 0.1);
    CHECK(lrs[12] == 0.1 / 10.0);
    CHECK(lrs.back() == 0.1 / 100.0);
    CHECK(st.lr_decays == 2);
  }
}

TEST_CASE("epoch batch sizes keep the partial batch") {
  const auto b = epoch_batches(7500, 256);
  CHECK(b.size() == 30);
  CHECK(b[28] == 256);
  CHECK(b.back() == 76);
  const auto one = epoch_batches(513, 256);
  CHECK(one == std::vector<std::size_t>{256, 257});
  CHECK(epoch_batches(512, 256) == std::vector<std::size_t>{256, 256});
}

TEST_CASE("train-mode and eval-mode forward agree once running statistics settle") {
  NetworkConfig c = tiny(2);
  c.dropout_keep = 1.0;
  ParameterSet p = build(c, 7);
  const Tensor x = testing::random_tensor({8, 2, 15, 15}, 8, 0.0, 1.0);
  Rng rng(1);
  Tensor train_out;
  for (int i = 0; i < 200; ++i) train_out = forward(p, x, Mode::kTrain, nullptr, &rng);
  const Tensor eval_out = forward(p, x);
  for (std::size_t i = 0; i < eval_out.size(); ++i) CHECK(std::abs(eval_out[i] - train_out[i]) < 1e-3);
}

TEST_CASE("two separable blobs are learned within five epochs") {
  TwoBlobs d = two_blobs(10);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.max_epochs = 5;
  cfg.min_epochs = 5;
  cfg.seed = 3;
  const TrainResult r = train(d.samples, d.lookup, tiny(), cfg);
  REQUIRE_FALSE(r.aborted);
  REQUIRE(r.history.size() == 5);
  double best_acc = 0.0;
  for (const auto& h : r.history) best_acc = std::max(best_acc, h.val_accuracy);
  CHECK(best_acc >= 0.99);
}

TEST_CASE("training is reproducible and keeps the best checkpoint") {
  TwoBlobs d = two_blobs(20);
  TrainConfig cfg;
  cfg.batch_size = 50;
  cfg.max_epochs = 6;
  cfg.min_epochs = 1;
  cfg.plateau_patience = 2;
  cfg.seed = 9;
  const auto dir = testing::temp_dir("train");
  TrainOptions opt;
  opt.out_dir = dir;
  const TrainResult a = train(d.samples, d.lookup, tiny(), cfg, opt);
  const TrainResult b = train(d.samples, d.lookup, tiny(), cfg);
  CHECK(a.history == b.history);
  CHECK(a.best == b.best);

  double min_loss = std::numeric_limits<double>::infinity();
  double last_lr = cfg.lr_initial;
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].epoch == static_cast<int>(i + 1));
    min_loss = std::min(min_loss, a.history[i].val_loss);
    CHECK(a.history[i].lr <= last_lr);
    last_lr = a.history[i].lr;
    const double k = std::log10(cfg.lr_initial / a.history[i].lr);
    CHECK(std::abs(k - std::round(k)) < 1e-9);
  }
  CHECK(a.best_val_loss == min_loss);
  const EvalSummary re = evaluate_patches(a.best, [&] {
    std::vector<PatchRef> val;
    for (const auto& p : d.samples.patches) if (p.split == Split::kVal) val.push_back(p);
    return val;
  }(), d.lookup, cfg.batch_size);
  CHECK(re.loss == min_loss);

  std::ifstream csv(dir / "history.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,train_loss,val_loss,val_accuracy,lr");
  std::stringstream js;
  js << std::ifstream(dir / "run.json").rdbuf();
  const auto run = nlohmann::json::parse(js.str());
  CHECK(run["train"]["batch_size"] == 50);
  CHECK(run["network"]["depth_param"] == 1);
  CHECK(run["best_epoch"] == a.best_epoch);
  CHECK(run["sample_manifest_fnv1a64"].get<std::string>().size() == 16);
  CHECK(read_checkpoint(dir / "best.pmck") == round_to_storage(a.best));
}

TEST_CASE("training errors") {
  TwoBlobs d = two_blobs(30);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_epochs = 2;
  cfg.min_epochs = 1;
  SampleSet no_val = d.samples;
  for (auto& p : no_val.patches) p.split = Split::kTrain;
  CHECK_THROWS_AS(train(no_val, d.lookup, tiny(), cfg), ConfigError);

  SceneLookup missing{{"bright", &d.bright}};
  CHECK_THROWS_AS(train(d.samples, missing, tiny(), cfg), ConfigError);

  // Non-finite inputs: the run aborts and keeps the initial parameters.
  BandStack poisoned = d.bright;
  for (float& v : poisoned.planes[0]) v = std::numeric_limits<float>::quiet_NaN();
  SceneLookup bad{{"bright", &poisoned}, {"dark", &d.dark}};
  const TrainResult r = train(d.samples, bad, tiny(), cfg);
  CHECK(r.aborted);
  CHECK(r.history.empty());
  CHECK(r.best.all_finite());
}
