#include <fstream>
#include <set>
#include <sstream>

#include "cloudmask/errors.hpp"
#include "cloudmask/experiment.hpp"
#include "cloudmask/sampler.hpp"
#include "cloudmask/synth.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using namespace cloudmask;

namespace {

const std::vector<BandId> kFour{BandId::kBlue, BandId::kGreen, BandId::kRed, BandId::kNir};

// Writes `count` small synthetic scenes per land type and returns entries.
std::vector<SceneEntry> write_scenes(const std::filesystem::path& dir,
                                     const std::vector<std::string>& types, int count) {
  std::vector<SceneEntry> out;
  std::uint64_t seed = 1;
  for (const auto& t : types) {
    for (int i = 0; i < count; ++i, ++seed) {
      SynthSpec s;
      s.width = s.height = 48;
      s.seed = seed;
      s.bands = kFour;
      s.cloud_count_mean = 3;
      s.cloud_axis_min = 5;
      s.cloud_axis_max = 10;
      s.shadow_offset_row = 4;
      s.shadow_offset_col = 6;
      const SyntheticScene sc = generate_synthetic(s);
      const std::string id = t + std::to_string(i);
      write_bandstack(sc.scene, dir / (id + ".pmbs"));
      write_mask(sc.truth, dir / (id + ".pmmr"));
      out.push_back({id, t, dir / (id + ".pmbs"), dir / (id + ".pmmr")});
    }
  }
  return out;
}

ExperimentSpec small_spec(std::vector<SceneEntry> scenes) {
  ExperimentSpec spec;
  spec.scenes = std::move(scenes);
  spec.network.depth_param = 1;
  spec.network.stage_widths = {4, 8, 16};
  spec.train.batch_size = 64;
  spec.train.max_epochs = 2;
  spec.train.min_epochs = 1;
  spec.quota = 120;
  spec.repetitions = 2;
  spec.master_seed = 5;
  return spec;
}

std::set<std::string> sampled_scenes(const std::filesystem::path& manifest) {
  std::set<std::string> ids;
  for (const auto& p : read_manifest(manifest).patches) ids.insert(p.scene_id);
  return ids;
}

}  // namespace

TEST_CASE("scene manifest parsing") {
  const auto m = parse_scene_manifest("# header\na forest a.pmbs /abs/a.pmmr\n\nb forest sub/b.pmbs b.pmmr  # note\n",
                                      "/data");
  REQUIRE(m.size() == 2);
  CHECK(m[0].scene_path == "/data/a.pmbs");
  CHECK(m[0].truth_path == "/abs/a.pmmr");
  CHECK(m[1].scene_path == "/data/sub/b.pmbs");
  CHECK(m[1].land_type == "forest");
  CHECK_THROWS_AS(parse_scene_manifest("a forest x.pmbs\n"), ConfigError);
  CHECK_THROWS_AS(parse_scene_manifest("a f x y\na f x y\n"), ConfigError);
  CHECK(parse_scene_manifest(format_scene_manifest(m)).size() == 2);
  CHECK(parse_mode("ablation") == ExperimentMode::kAblation);
  CHECK_THROWS_AS(parse_mode("grid"), ConfigError);
}

TEST_CASE("seed derivation is deterministic and distinct") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 100; ++i) {
    CHECK(derive_seed(7, i) == derive_seed(7, i));
    seen.insert(derive_seed(7, i));
  }
  CHECK(seen.size() == 100);
  CHECK(derive_seed(7, 0) != derive_seed(8, 0));
}

TEST_CASE("ablation variants") {
  const std::vector<BandId> all(std::begin(kAllBands), std::end(kAllBands));
  const auto v = ablation_variants(all, {});
  CHECK(v.size() == 9);
  CHECK(v.front().bands.size() == 7);
  for (std::size_t i = 1; i <= 7; ++i) CHECK(v[i].bands.size() == 6);
  CHECK(v.back().bands == std::vector<BandId>{BandId::kRed, BandId::kGreen, BandId::kBlue, BandId::kNir});
  const auto one = ablation_variants(all, {BandId::kSwir1});
  REQUIRE(one.size() == 2);
  CHECK(one[1].bands.size() == 6);
  CHECK_THROWS_AS(ablation_variants(kFour, {BandId::kSwir1}), ConfigError);
  CHECK_THROWS_AS(ablation_variants({BandId::kRed}, {}), ConfigError);
}

TEST_CASE("spec validation happens before any training") {
  const auto dir = testing::temp_dir("exp_validate");
  auto scenes = write_scenes(dir, {"a"}, 2);
  ExperimentSpec spec = small_spec(scenes);
  CHECK_NOTHROW(spec.validate());
  spec.scenes[1].truth_path = dir / "missing.pmmr";
  CHECK_THROWS_AS(run_leave_one_out(spec), ConfigError);
  spec = small_spec({scenes[0]});
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = small_spec(scenes);
  spec.repetitions = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("leave-one-out: one fold per scene, never trained on its test scene") {
  const auto dir = testing::temp_dir("exp_loo");
  ExperimentSpec spec = small_spec(write_scenes(dir, {"water"}, 2));
  spec.out_dir = dir / "out";
  const ExperimentResult r = run_leave_one_out(spec);
  REQUIRE(r.runs.size() == 2);
  CHECK_FALSE(r.any_aborted);
  for (const auto& run : r.runs) {
    REQUIRE(run.test_scenes.size() == 1);
    CHECK(std::find(run.train_scenes.begin(), run.train_scenes.end(), run.test_scenes[0]) ==
          run.train_scenes.end());
    const auto ids = sampled_scenes(*spec.out_dir / run.name / "samples.txt");
    CHECK(ids.count(run.test_scenes[0]) == 0);
    CHECK(std::filesystem::exists(*spec.out_dir / run.name / "best.pmck"));
    CHECK(std::filesystem::exists(*spec.out_dir / run.name / (run.test_scenes[0] + ".pmmr")));
    REQUIRE(run.report.has_value());
    CHECK(run.masks.size() == 1);
  }
  CHECK(r.runs[0].test_scenes[0] == "water0");
  CHECK(r.runs[1].test_scenes[0] == "water1");
  REQUIRE(r.rows.size() == 1);
  CHECK(r.overall.has_value());
  CHECK(r.table.find("water") != std::string::npos);

  std::stringstream js;
  js << std::ifstream(*spec.out_dir / "experiment.json").rdbuf();
  const auto j = nlohmann::json::parse(js.str());
  CHECK(j["runs"].size() == 2);
  CHECK(j["scenes"]["water0"]["scene_fnv1a64"].get<std::string>().size() == 16);

  // Rerunning is bit-identical.
  ExperimentSpec again = spec;
  again.out_dir.reset();
  const ExperimentResult r2 = run_leave_one_out(again);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(r2.runs[i].training.history == r.runs[i].training.history);
    CHECK(r2.runs[i].masks == r.runs[i].masks);
  }
  // Fold subset.
  again.only_folds = {1};
  CHECK(run_leave_one_out(again).runs.size() == 1);
}

TEST_CASE("all-land-type: one test scene per type, scene-level validation pool") {
  const auto dir = testing::temp_dir("exp_alt");
  ExperimentSpec spec = small_spec(write_scenes(dir, {"crops", "snow"}, 3));
  const ExperimentResult r = run_all_land_type(spec);
  REQUIRE(r.runs.size() == 2);
  CHECK(r.rows.size() == 2);
  CHECK(r.overall.has_value());
  for (const auto& run : r.runs) {
    CHECK(run.test_scenes.size() == 2);
    CHECK(run.val_scenes.size() == 1);
    CHECK(run.train_scenes.size() == 3);
    std::set<std::string> types;
    for (const auto& t : run.test_scenes) types.insert(t.substr(0, t.size() - 1));
    CHECK(types == std::set<std::string>{"crops", "snow"});
    for (const auto& t : run.test_scenes) {
      CHECK(std::count(run.train_scenes.begin(), run.train_scenes.end(), t) == 0);
      CHECK(std::count(run.val_scenes.begin(), run.val_scenes.end(), t) == 0);
    }
    CHECK(run.scene_reports.size() == 2);
  }
  CHECK(r.runs[0].seed != r.runs[1].seed);
  CHECK(run_all_land_type(spec).runs[1].test_scenes == r.runs[1].test_scenes);
}

TEST_CASE("ablation with a drop list yields the baseline and one variant") {
  const auto dir = testing::temp_dir("exp_abl");
  ExperimentSpec spec = small_spec(write_scenes(dir, {"urban"}, 3));
  spec.repetitions = 1;
  spec.drop = {BandId::kNir};
  const ExperimentResult r = run_ablation(spec);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].first == "all_bands");
  CHECK(r.rows[1].first == "drop_nir");
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[0].training.best.config().input_channels == 4);
  CHECK(r.runs[1].training.best.config().input_channels == 3);
  spec.drop = {BandId::kSwir2};
  CHECK_THROWS_AS(run_ablation(spec), ConfigError);
}

TEST_CASE("an unusable scene aborts its run and is reported") {
  const auto dir = testing::temp_dir("exp_abort");
  auto scenes = write_scenes(dir, {"barren"}, 2);
  BandStack s = read_bandstack(scenes[1].scene_path);
  for (auto& n : s.nodata) n = 1;
  write_bandstack(s, scenes[1].scene_path);
  ExperimentSpec spec = small_spec(scenes);
  const ExperimentResult r = run_leave_one_out(spec);
  CHECK(r.any_aborted);
  // Fold 1 trains on the empty scene; fold 2 tests on it.
  CHECK(r.runs[0].aborted);
  CHECK(r.runs[1].aborted);
}
