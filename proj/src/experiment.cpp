#include "cloudmask/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "cloudmask/errors.hpp"
#include "cloudmask/sampler.hpp"
#include "jsonio.hpp"

namespace cloudmask {

std::string_view mode_name(ExperimentMode mode) {
  switch (mode) {
    case ExperimentMode::kLandTypeSpecific: return "land_type_specific";
    case ExperimentMode::kAllLandType: return "all_land_type";
    case ExperimentMode::kAblation: return "ablation";
  }
  return "?";
}

ExperimentMode parse_mode(std::string_view s) {
  if (s == "land_type_specific" || s == "loo") return ExperimentMode::kLandTypeSpecific;
  if (s == "all_land_type") return ExperimentMode::kAllLandType;
  if (s == "ablation") return ExperimentMode::kAblation;
  throw ConfigError("unknown experiment mode '" + std::string(s) + "'");
}

std::vector<SceneEntry> parse_scene_manifest(const std::string& text,
                                             const std::filesystem::path& base) {
  std::vector<SceneEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    SceneEntry e;
    std::string scene, truth, extra;
    if (!(fields >> e.id)) continue;
    if (!(fields >> e.land_type >> scene >> truth) || (fields >> extra)) {
      throw ConfigError("scene manifest line " + std::to_string(lineno) +
                        ": expected 'id land_type scene truth'");
    }
    if (!ids.insert(e.id).second) {
      throw ConfigError("scene manifest: duplicate id '" + e.id + "'");
    }
    e.scene_path = std::filesystem::path(scene).is_absolute() ? std::filesystem::path(scene) : base / scene;
    e.truth_path = std::filesystem::path(truth).is_absolute() ? std::filesystem::path(truth) : base / truth;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<SceneEntry> read_scene_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read scene manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene_manifest(ss.str(), path.parent_path());
}

std::string format_scene_manifest(const std::vector<SceneEntry>& scenes) {
  std::string out = "# id land_type scene truth\n";
  for (const auto& e : scenes) {
    out += e.id + " " + e.land_type + " " + e.scene_path.string() + " " +
           e.truth_path.string() + "\n";
  }
  return out;
}

void ExperimentSpec::validate() const {
  if (scenes.empty()) throw ConfigError("experiment has no scenes");
  if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
  if (quota < 4) throw ConfigError("quota must be at least 4");
  if (!(val_scene_fraction > 0 && val_scene_fraction < 1)) {
    throw ConfigError("val_scene_fraction must be in (0,1)");
  }
  train.validate();
  inference.validate();
  std::map<std::string, int> per_type;
  for (const auto& e : scenes) {
    for (const auto& p : {e.scene_path, e.truth_path}) {
      if (!std::filesystem::is_regular_file(p)) {
        throw ConfigError("scene '" + e.id + "': missing file " + p.string());
      }
    }
    ++per_type[e.land_type];
  }
  for (const auto& [type, n] : per_type) {
    if (n < 2) throw ConfigError("land type '" + type + "' needs at least two scenes");
  }
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  // splitmix64 over the pair.
  std::uint64_t z = parent + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<BandVariant> ablation_variants(const std::vector<BandId>& baseline,
                                           const std::vector<BandId>& drop) {
  auto has = [&](BandId b) {
    return std::find(baseline.begin(), baseline.end(), b) != baseline.end();
  };
  std::vector<BandVariant> out{{"all_bands", baseline}};
  auto without = [&](const std::vector<BandId>& gone) {
    std::vector<BandId> kept;
    for (BandId b : baseline) {
      if (std::find(gone.begin(), gone.end(), b) == gone.end()) kept.push_back(b);
    }
    if (kept.empty()) throw ConfigError("ablation variant would drop every band");
    return kept;
  };
  if (!drop.empty()) {
    for (BandId b : drop) {
      if (!has(b)) {
        throw ConfigError("cannot drop band '" + std::string(band_name(b)) +
                          "': not among the scene bands");
      }
    }
    out.push_back({"drop_" + format_band_list(drop), without(drop)});
    return out;
  }
  for (BandId b : baseline) out.push_back({"drop_" + std::string(band_name(b)), without({b})});
  const std::vector<BandId> keep{BandId::kRed, BandId::kGreen, BandId::kBlue, BandId::kNir};
  for (BandId b : keep) {
    if (!has(b)) throw ConfigError("keep variant needs band '" + std::string(band_name(b)) + "'");
  }
  out.push_back({"keep_red,green,blue,nir", keep});
  return out;
}

namespace {

struct Loaded {
  BandStack scene;
  MaskRaster truth;
};

struct TrainScene {
  std::string id;
  std::optional<Split> whole;  // empty: 2x2 grid split
};

std::string hex_checksum(const std::filesystem::path& p) {
  const auto bytes = detail::read_file(p);
  return detail::hex64(detail::fnv1a64(bytes.data(), bytes.size()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

nlohmann::json report_json(const MetricsReport& r) {
  return nlohmann::json::parse(to_json(r, -1));
}

class Runner {
 public:
  explicit Runner(const ExperimentSpec& spec) : spec_(spec) {
    for (const auto& e : spec.scenes) entries_[e.id] = &e;
  }

  const Loaded& load(const std::string& id) {
    auto it = cache_.find(id);
    if (it != cache_.end()) return it->second;
    const SceneEntry& e = *entries_.at(id);
    Loaded l{read_bandstack(e.scene_path), read_mask(e.truth_path)};
    if (l.truth.width != l.scene.width || l.truth.height != l.scene.height) {
      throw DataError("scene '" + id + "': truth mask dimensions differ from the scene");
    }
    return cache_.emplace(id, std::move(l)).first->second;
  }

  std::vector<BandId> baseline_bands() {
    if (!spec_.bands.empty()) return spec_.bands;
    return load(spec_.scenes.front().id).scene.bands;
  }

  NetworkConfig network_for(const std::vector<BandId>& bands) const {
    NetworkConfig net = spec_.network;
    net.input_bands.clear();
    for (BandId b : bands) net.input_bands.emplace_back(band_name(b));
    net.input_channels = bands.size();
    net.dropout_keep = spec_.train.dropout_keep;
    return net;
  }

  void log(const std::string& msg) const {
    if (spec_.log) spec_.log(msg);
  }

  RunOutcome run(const std::string& name, const std::string& land_type,
                 const std::vector<TrainScene>& train_scenes,
                 const std::vector<std::string>& test_scenes, const NetworkConfig& net,
                 std::uint64_t seed, const std::optional<std::filesystem::path>& dir) {
    RunOutcome out;
    out.name = name;
    out.land_type = land_type;
    out.test_scenes = test_scenes;
    out.seed = seed;
    for (const auto& t : train_scenes) {
      (t.whole == Split::kVal ? out.val_scenes : out.train_scenes).push_back(t.id);
    }
    log("run " + name + ": " + std::to_string(train_scenes.size()) + " training scenes, " +
        std::to_string(test_scenes.size()) + " test scenes");
    try {
      SampleSet samples;
      samples.seed = seed;
      samples.quota = spec_.quota;
      SceneLookup lookup;
      for (std::size_t i = 0; i < train_scenes.size(); ++i) {
        const Loaded& l = load(train_scenes[i].id);
        SampleOptions opt;
        opt.scene_id = train_scenes[i].id;
        opt.quota = spec_.quota;
        opt.seed = derive_seed(seed, i);
        opt.strict = spec_.strict_grid;
        opt.whole_scene = train_scenes[i].whole;
        SampleSet s = subsample(l.scene, l.truth, opt);
        s.seed = seed;
        samples.append(s);
        lookup[train_scenes[i].id] = &l.scene;
      }
      // Leakage audit: no test pixel may feed training or validation.
      const std::set<std::string> test_set(test_scenes.begin(), test_scenes.end());
      for (const auto& p : samples.patches) {
        if (test_set.count(p.scene_id)) {
          throw ContractViolation("test scene '" + p.scene_id + "' leaked into sampling");
        }
      }
      if (dir) write_manifest(samples, *dir / "samples.txt");

      TrainConfig tc = spec_.train;
      tc.seed = derive_seed(seed, 1u << 20);
      TrainOptions topt;
      topt.out_dir = dir;
      if (spec_.on_epoch) {
        topt.on_epoch = [&](const EpochRecord& r) { spec_.on_epoch(name, r); };
      }
      out.training = train(samples, lookup, net, tc, topt);
      if (out.training.aborted) throw DataError(out.training.abort_reason);

      InferenceConfig ic = spec_.inference;
      ic.bands.clear();
      for (const auto& id : test_scenes) {
        const Loaded& l = load(id);
        MaskRaster mask = infer_scene(l.scene, out.training.best, ic);
        MetricsReport rep = evaluate(mask, l.truth);
        if (dir) {
          write_mask(mask, *dir / (id + ".pmmr"));
          write_text(*dir / (id + "_metrics.json"), to_json(rep) + "\n");
        }
        out.scene_reports.push_back(std::move(rep));
        if (spec_.keep_masks) out.masks.push_back(std::move(mask));
      }
      out.report = aggregate(out.scene_reports, spec_.averaging);
    } catch (const std::exception& e) {
      out.aborted = true;
      out.reason = e.what();
      log("run " + name + " aborted: " + out.reason);
    }
    return out;
  }

  std::optional<std::filesystem::path> subdir(const std::optional<std::filesystem::path>& base,
                                              const std::string& name) const {
    if (!base) return std::nullopt;
    return *base / name;
  }

  nlohmann::json scene_checksums() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& e : spec_.scenes) {
      j[e.id] = {{"scene", e.scene_path.string()},
                 {"scene_fnv1a64", hex_checksum(e.scene_path)},
                 {"truth", e.truth_path.string()},
                 {"truth_fnv1a64", hex_checksum(e.truth_path)}};
    }
    return j;
  }

  void finish(ExperimentResult& res, const std::optional<std::filesystem::path>& dir,
              std::string_view mode) const {
    for (const auto& r : res.runs) res.any_aborted = res.any_aborted || r.aborted;
    if (!res.rows.empty()) {
      res.table = format_table(res.rows);
      if (res.overall) {
        std::vector<std::pair<std::string, MetricsReport>> with_mean = res.rows;
        with_mean.emplace_back("average", *res.overall);
        res.table = format_table(with_mean);
      }
    }
    if (!dir) return;
    nlohmann::json j;
    j["mode"] = mode;
    j["master_seed"] = spec_.master_seed;
    j["repetitions"] = spec_.repetitions;
    j["quota"] = spec_.quota;
    j["strict_grid"] = spec_.strict_grid;
    j["averaging"] = spec_.averaging == Averaging::kMacro ? "macro" : "micro";
    j["threshold"] = spec_.inference.threshold;
    j["train"] = detail::to_json(spec_.train);
    j["network"] = detail::to_json(spec_.network);
    j["scenes"] = scene_checksums();
    j["runs"] = nlohmann::json::array();
    for (const auto& r : res.runs) {
      nlohmann::json rj{{"name", r.name},
                        {"land_type", r.land_type},
                        {"seed", r.seed},
                        {"test_scenes", r.test_scenes},
                        {"train_scenes", r.train_scenes},
                        {"val_scenes", r.val_scenes},
                        {"aborted", r.aborted}};
      if (r.aborted) rj["reason"] = r.reason;
      if (r.report) rj["metrics"] = report_json(*r.report);
      j["runs"].push_back(rj);
    }
    j["rows"] = nlohmann::json::object();
    for (const auto& [name, rep] : res.rows) j["rows"][name] = report_json(rep);
    if (res.overall) j["overall"] = report_json(*res.overall);
    j["any_aborted"] = res.any_aborted;
    write_text(*dir / "experiment.json", j.dump(2) + "\n");
    write_text(*dir / "summary.txt", res.table);
  }

  const ExperimentSpec& spec() const { return spec_; }

 private:
  const ExperimentSpec& spec_;
  std::map<std::string, const SceneEntry*> entries_;
  std::map<std::string, Loaded> cache_;
};

// Land types in order of first appearance.
std::vector<std::pair<std::string, std::vector<std::string>>> group_by_type(
    const std::vector<SceneEntry>& scenes) {
  std::vector<std::pair<std::string, std::vector<std::string>>> groups;
  for (const auto& e : scenes) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const auto& g) { return g.first == e.land_type; });
    if (it == groups.end()) {
      groups.push_back({e.land_type, {}});
      it = groups.end() - 1;
    }
    it->second.push_back(e.id);
  }
  return groups;
}

std::optional<MetricsReport> combine(const std::vector<MetricsReport>& reports,
                                     Averaging mode) {
  if (reports.empty()) return std::nullopt;
  return aggregate(reports, mode);
}

ExperimentResult all_land_type(Runner& runner, const NetworkConfig& net,
                               const std::optional<std::filesystem::path>& dir,
                               std::uint64_t master) {
  const ExperimentSpec& spec = runner.spec();
  const auto groups = group_by_type(spec.scenes);
  ExperimentResult res;
  std::vector<MetricsReport> reps;
  for (int r = 0; r < spec.repetitions; ++r) {
    const std::uint64_t seed = derive_seed(master, static_cast<std::uint64_t>(r));
    Rng rng(seed);
    std::vector<std::string> test;
    std::vector<std::string> pool;
    for (const auto& [type, ids] : groups) {
      std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
      const std::size_t t = pick(rng);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        (i == t ? test : pool).push_back(ids[i]);
      }
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    auto n_val = static_cast<std::size_t>(
        std::llround(spec.val_scene_fraction * static_cast<double>(pool.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, pool.size() - 1);
    std::vector<TrainScene> train_scenes;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      train_scenes.push_back({pool[i], i < n_val ? Split::kVal : Split::kTrain});
    }
    const std::string name = "rep" + std::to_string(r + 1);
    RunOutcome out = runner.run(name, "", train_scenes, test, net, seed, runner.subdir(dir, name));
    if (out.report) {
      reps.push_back(*out.report);
      res.rows.emplace_back(name, *out.report);
    }
    res.runs.push_back(std::move(out));
  }
  res.overall = combine(reps, Averaging::kMacro);
  return res;
}

}  // namespace

ExperimentResult run_leave_one_out(const ExperimentSpec& spec) {
  spec.validate();
  Runner runner(spec);
  const NetworkConfig net = runner.network_for(runner.baseline_bands());
  ExperimentResult res;
  std::vector<MetricsReport> type_reports;
  std::size_t fold = 0;
  for (const auto& [type, ids] : group_by_type(spec.scenes)) {
    std::vector<MetricsReport> folds;
    for (std::size_t t = 0; t < ids.size(); ++t, ++fold) {
      if (!spec.only_folds.empty() &&
          std::find(spec.only_folds.begin(), spec.only_folds.end(), fold) ==
              spec.only_folds.end()) {
        continue;
      }
      std::vector<TrainScene> train_scenes;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i != t) train_scenes.push_back({ids[i], std::nullopt});
      }
      const std::string name = type + "_fold" + std::to_string(t + 1);
      RunOutcome out = runner.run(name, type, train_scenes, {ids[t]}, net,
                                  derive_seed(spec.master_seed, fold),
                                  runner.subdir(spec.out_dir, name));
      if (out.report) folds.push_back(*out.report);
      res.runs.push_back(std::move(out));
    }
    if (auto agg = combine(folds, Averaging::kMacro)) {
      res.rows.emplace_back(type, *agg);
      type_reports.push_back(*agg);
    }
  }
  res.overall = combine(type_reports, Averaging::kMacro);
  runner.finish(res, spec.out_dir, mode_name(ExperimentMode::kLandTypeSpecific));
  return res;
}

ExperimentResult run_all_land_type(const ExperimentSpec& spec) {
  spec.validate();
  Runner runner(spec);
  const NetworkConfig net = runner.network_for(runner.baseline_bands());
  ExperimentResult res = all_land_type(runner, net, spec.out_dir, spec.master_seed);
  runner.finish(res, spec.out_dir, mode_name(ExperimentMode::kAllLandType));
  return res;
}

ExperimentResult run_ablation(const ExperimentSpec& spec) {
  spec.validate();
  Runner runner(spec);
  const std::vector<BandVariant> variants = ablation_variants(runner.baseline_bands(), spec.drop);
  ExperimentResult res;
  for (const auto& v : variants) {
    const NetworkConfig net = runner.network_for(v.bands);
    ExperimentResult sub = all_land_type(runner, net, runner.subdir(spec.out_dir, v.name),
                                         spec.master_seed);
    for (auto& r : sub.runs) {
      r.name = v.name + "/" + r.name;
      res.runs.push_back(std::move(r));
    }
    if (sub.overall) res.rows.emplace_back(v.name, *sub.overall);
  }
  runner.finish(res, spec.out_dir, mode_name(ExperimentMode::kAblation));
  return res;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  switch (spec.mode) {
    case ExperimentMode::kLandTypeSpecific: return run_leave_one_out(spec);
    case ExperimentMode::kAllLandType: return run_all_land_type(spec);
    case ExperimentMode::kAblation: return run_ablation(spec);
  }
  throw ConfigError("unknown experiment mode");
}

}  // namespace cloudmask
