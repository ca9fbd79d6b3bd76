#include <cmath>
#include <map>
#include <set>

#include "cloudmask/errors.hpp"
#include "cloudmask/sampler.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cloudmask;

namespace {

std::vector<Center> brute_force_centres(const BandStack& s) {
  std::vector<Center> out;
  if (s.width < 15 || s.height < 15) return out;
  for (std::size_t r = 7; r + 7 < s.height; ++r)
    for (std::size_t c = 7; c + 7 < s.width; ++c) {
      bool ok = true;
      for (std::size_t i = r - 7; i <= r + 7 && ok; ++i)
        for (std::size_t j = c - 7; j <= c + 7; ++j)
          if (s.nodata[i * s.width + j]) {
            ok = false;
            break;
          }
      if (ok) out.push_back({r, c});
    }
  return out;
}

MaskRaster uniform_truth(const BandStack& s, MaskLabel l = MaskLabel::kClear) {
  return MaskRaster(s.width, s.height, l);
}

}  // namespace

TEST_CASE("enumerate_valid small cases") {
  const BandStack s15 = testing::random_scene(15, 15, 1);
  const auto c15 = enumerate_valid(s15);
  REQUIRE(c15.size() == 1);
  CHECK(c15[0] == Center{7, 7});
  CHECK(enumerate_valid(testing::random_scene(20, 20, 2)).size() == 36);
  BandStack dirty = s15;
  dirty.nodata[3 * 15 + 11] = 1;
  CHECK(enumerate_valid(dirty).empty());
  CHECK(enumerate_valid(testing::random_scene(14, 40, 3)).empty());
}

TEST_CASE("enumerate_valid matches the brute-force scan") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> dim(10, 128);
  std::uniform_real_distribution<double> p(0.0, 0.004);
  for (int trial = 0; trial < 50; ++trial) {
    const BandStack s =
        testing::random_scene(dim(rng), dim(rng), 100 + trial, p(rng), {BandId::kRed});
    const auto got = enumerate_valid(s);
    CHECK(got == brute_force_centres(s));
    for (const auto& c : got) CHECK(window_is_valid(s, c.row, c.col));
  }
}

TEST_CASE("grid_split halves each axis") {
  const GridAssignment g = grid_split(100, 100, 1);
  for (int q = 0; q < 4; ++q) {
    CHECK(g.quadrant_rows(q) == 50);
    CHECK(g.quadrant_cols(q) == 50);
  }
  const GridAssignment o = grid_split(101, 101, 1);
  CHECK(o.quadrant_rows(0) == 51);
  CHECK(o.quadrant_rows(2) == 50);
  CHECK(o.quadrant_cols(0) == 51);
  CHECK(o.quadrant_cols(1) == 50);
  CHECK(o.quadrant_of(50, 51) == 1);
  CHECK(o.quadrant_of(51, 50) == 2);
  CHECK_THROWS_AS(grid_split(29, 100, 1), ConfigError);
}

TEST_CASE("validation quadrant is uniform") {
  int counts[4] = {};
  for (std::uint64_t seed = 0; seed < 4000; ++seed) ++counts[grid_split(64, 64, seed).val_quadrant];
  for (int q = 0; q < 4; ++q) {
    const double f = counts[q] / 4000.0;
    CHECK(std::abs(f - 0.25) <= 0.02);
  }
}

TEST_CASE("subsample on an abundant scene: 2500 per sub-image, 75/25") {
  const BandStack s = testing::random_scene(256, 256, 4, 0.0, {BandId::kRed, BandId::kNir});
  MaskRaster truth = uniform_truth(s);
  for (std::size_t i = 0; i < truth.labels.size(); i += 3) truth.labels[i] = MaskLabel::kCloudShadow;
  SampleOptions opt;
  opt.seed = 5;
  const SampleSet set = subsample(s, truth, opt);
  REQUIRE(set.scenes.size() == 1);
  const GridAssignment& g = *set.scenes[0].grid;
  std::array<std::size_t, 4> per{};
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& p : set.patches) {
    const int q = g.quadrant_of(p.row, p.col);
    ++per[q];
    CHECK(p.split == (q == g.val_quadrant ? Split::kVal : Split::kTrain));
    CHECK(p.label == truth.at(p.row, p.col));
    CHECK(window_is_valid(s, p.row, p.col));
    CHECK(seen.insert({p.row, p.col}).second);
  }
  for (int q = 0; q < 4; ++q) {
    CHECK(per[q] == 2500);
    CHECK(set.scenes[0].shortfall[q] == 0);
  }
  CHECK(set.count(Split::kTrain) == 7500);
  CHECK(set.count(Split::kVal) == 2500);
  CHECK(subsample(s, truth, opt).patches == set.patches);
}

TEST_CASE("subsample records a shortfall when a sub-image runs out") {
  const BandStack s = testing::random_scene(240, 240, 6, 0.0, {BandId::kRed});
  MaskRaster truth = uniform_truth(s);
  // Top-left quadrant (rows, cols < 120): keep exactly 1000 eligible centres.
  std::size_t kept = 0;
  for (std::size_t r = 0; r < 120; ++r)
    for (std::size_t c = 0; c < 120; ++c) {
      const bool inner = r >= 7 && c >= 7;
      if (inner && kept < 1000) {
        ++kept;
      } else {
        truth.labels[r * 240 + c] = MaskLabel::kNodata;
      }
    }
  SampleOptions opt;
  opt.seed = 7;
  const SampleSet set = subsample(s, truth, opt);
  const GridAssignment& g = *set.scenes[0].grid;
  std::array<std::size_t, 4> per{};
  for (const auto& p : set.patches) ++per[g.quadrant_of(p.row, p.col)];
  CHECK(per[0] == 1000);
  CHECK(set.scenes[0].available[0] == 1000);
  CHECK(set.scenes[0].shortfall[0] == 1500);
  for (int q = 1; q < 4; ++q) CHECK(per[q] == 2500);
}

TEST_CASE("subsample errors and strict mode") {
  BandStack s = testing::random_scene(40, 40, 8, 0.0, {BandId::kRed});
  for (auto& n : s.nodata) n = 1;
  CHECK_THROWS_AS(subsample(s, uniform_truth(s), {}), DataError);

  const BandStack ok = testing::random_scene(90, 90, 9, 0.0, {BandId::kRed});
  SampleOptions opt;
  opt.quota = 400;
  opt.strict = true;
  const SampleSet set = subsample(ok, uniform_truth(ok), opt);
  const GridAssignment& g = *set.scenes[0].grid;
  for (const auto& p : set.patches) CHECK(g.window_inside_quadrant(p.row, p.col));
  CHECK(set.patches.size() == 400);
}

TEST_CASE("whole-scene assignment") {
  const BandStack s = testing::random_scene(50, 50, 10, 0.0, {BandId::kRed});
  SampleOptions opt;
  opt.quota = 300;
  opt.whole_scene = Split::kVal;
  const SampleSet set = subsample(s, uniform_truth(s), opt);
  CHECK(set.patches.size() == 300);
  CHECK(set.count(Split::kVal) == 300);
  CHECK_FALSE(set.scenes[0].grid.has_value());
}

TEST_CASE("per-centre selection frequencies are uniform") {
  const BandStack s = testing::random_scene(44, 44, 11, 0.0, {BandId::kRed});
  const std::size_t trials = 3000;
  SampleOptions opt;
  opt.quota = 40;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> hits;
  for (std::size_t t = 0; t < trials; ++t) {
    opt.seed = t;
    for (const auto& p : subsample(s, uniform_truth(s), opt).patches) ++hits[{p.row, p.col}];
  }
  // 44x44 splits into 22x22 quadrants; each quadrant of valid centres holds
  // 15 x 15 = 225 candidates of which 10 are drawn.
  const GridAssignment g = grid_split(44, 44, 0);
  std::array<std::size_t, 4> avail{};
  for (const auto& c : enumerate_valid(s)) ++avail[g.quadrant_of(c.row, c.col)];
  std::size_t beyond = 0, total = 0;
  for (const auto& c : enumerate_valid(s)) {
    const double p = 10.0 / static_cast<double>(avail[g.quadrant_of(c.row, c.col)]);
    const double mean = trials * p;
    const double sd = std::sqrt(trials * p * (1 - p));
    const double x = static_cast<double>(hits[{c.row, c.col}]);
    if (std::abs(x - mean) > 3 * sd) ++beyond;
    CHECK(std::abs(x - mean) < 5 * sd);
    ++total;
  }
  CHECK(static_cast<double>(beyond) / static_cast<double>(total) < 0.01);
}

TEST_CASE("extract copies the window channel-major") {
  const BandStack s = testing::random_scene(40, 36, 12);
  const std::vector<std::size_t> all{0, 1, 2, 3, 4, 5, 6};
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<std::size_t> row(7, 28), col(7, 32);
  for (int t = 0; t < 25; ++t) {
    const std::size_t r = row(rng), c = col(rng);
    const Tensor x = extract(s, r, c, all);
    REQUIRE(x.shape() == Tensor::Shape{7, 15, 15});
    for (std::size_t b = 0; b < 7; ++b)
      for (std::size_t i = 0; i < 15; ++i)
        for (std::size_t j = 0; j < 15; ++j)
          CHECK(x[(b * 15 + i) * 15 + j] == s.planes[b][(r - 7 + i) * 40 + (c - 7 + j)]);
    CHECK(x[(3 * 15 + 7) * 15 + 7] == s.planes[3][r * 40 + c]);
  }
  const std::vector<std::size_t> six{0, 1, 2, 4, 5, 6};
  CHECK(extract(s, 10, 10, six).dim(0) == 6);
  CHECK_THROWS_AS(extract(s, 3, 10, all), ContractViolation);
  BandStack dirty = s;
  dirty.nodata[10 * 40 + 10] = 1;
  CHECK_THROWS_AS(extract(dirty, 12, 12, all), ContractViolation);
}

TEST_CASE("resolve_input_bands") {
  const BandStack s = testing::random_scene(15, 15, 14, 0.0, {BandId::kBlue, BandId::kRed, BandId::kNir});
  CHECK(resolve_input_bands(s, {}, 3) == std::vector<std::size_t>{0, 1, 2});
  const std::vector<std::string> names{"nir", "blue"};
  CHECK(resolve_input_bands(s, names, 2) == std::vector<std::size_t>{2, 0});
  CHECK_THROWS_AS(resolve_input_bands(s, names, 3), ConfigError);
  const std::vector<std::string> missing{"swir1"};
  CHECK_THROWS_AS(resolve_input_bands(s, missing, 1), ConfigError);
}

TEST_CASE("manifest roundtrip") {
  const BandStack s = testing::random_scene(64, 64, 15, 0.01, {BandId::kRed});
  MaskRaster truth = uniform_truth(s, MaskLabel::kCloudShadow);
  SampleOptions opt;
  opt.quota = 200;
  opt.seed = 3;
  opt.scene_id = "alpha";
  SampleSet set = subsample(s, truth, opt);
  opt.scene_id = "beta";
  opt.whole_scene = Split::kTrain;
  set.append(subsample(s, truth, opt));
  const std::string text = format_manifest(set);
  const SampleSet back = parse_manifest(text);
  CHECK(back.patches == set.patches);
  CHECK(back.seed == set.seed);
  CHECK(back.quota == set.quota);
  CHECK(format_manifest(back) == text);
  const auto dir = testing::temp_dir("manifest");
  write_manifest(set, dir / "m.txt");
  CHECK(read_manifest(dir / "m.txt").patches == set.patches);
  CHECK_THROWS(parse_manifest("garbage\n"));
}
