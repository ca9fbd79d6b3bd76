// cloudmask command-line tool.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cloudmask/checkpoint.hpp"
#include "cloudmask/errors.hpp"
#include "cloudmask/experiment.hpp"
#include "cloudmask/inference.hpp"
#include "cloudmask/metrics.hpp"
#include "cloudmask/render.hpp"
#include "cloudmask/sampler.hpp"
#include "cloudmask/scene.hpp"
#include "cloudmask/synth.hpp"
#include "cloudmask/trainer.hpp"

namespace fs = std::filesystem;
using namespace cloudmask;

namespace {

constexpr int kExitData = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAborted = 3;

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string bands;
  std::string drop;
  double threshold = 0.5;
  std::string out;
};

// --out wins, then $CLOUDMASK_OUT joined with `fallback`.
fs::path output_path(const Globals& g, const std::string& fallback) {
  if (!g.out.empty()) return g.out;
  if (const char* root = std::getenv("CLOUDMASK_OUT"); root && *root) {
    return fs::path(root) / fallback;
  }
  throw ConfigError("no output location: pass --out or set CLOUDMASK_OUT");
}

std::vector<std::string> band_names(const std::string& list) {
  std::vector<std::string> out;
  if (list.empty()) return out;
  for (BandId b : parse_band_list(list)) out.emplace_back(band_name(b));
  return out;
}

void add_train_options(CLI::App* cmd, TrainConfig& tc, NetworkConfig& nc) {
  cmd->add_option("--batch-size", tc.batch_size)->capture_default_str();
  cmd->add_option("--lr", tc.lr_initial, "Initial learning rate")->capture_default_str();
  cmd->add_option("--patience", tc.plateau_patience)->capture_default_str();
  cmd->add_option("--min-delta", tc.plateau_min_delta)->capture_default_str();
  cmd->add_option("--momentum", tc.momentum)->capture_default_str();
  cmd->add_option("--weight-decay", tc.weight_decay)->capture_default_str();
  cmd->add_option("--dropout-keep", tc.dropout_keep)->capture_default_str();
  cmd->add_option("--max-epochs", tc.max_epochs)->capture_default_str();
  cmd->add_option("--min-epochs", tc.min_epochs)->capture_default_str();
  cmd->add_option("--depth", nc.depth_param, "n in the 6n+2 layer count")->capture_default_str();
  cmd->add_option("--widths", nc.stage_widths, "Stage widths, e.g. 16,32,64")
      ->delimiter(',');
}

void print_epoch(const std::string& run, const EpochRecord& r) {
  std::fprintf(stderr, "%s epoch %3d  train %.5f  val %.5f  acc %.4f  lr %g\n",
               run.c_str(), r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.lr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cloud and cloud-shadow masking with a residual patch classifier"};
  app.set_config("--config", "", "INI file; [subcommand] sections, flags override it");
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for inference")->capture_default_str();
  app.add_option("--bands", g.bands, "Comma-separated input bands");
  app.add_option("--drop", g.drop, "Comma-separated bands to drop (ablation)");
  app.add_option("--threshold", g.threshold, "Decision threshold in (0,1)")->capture_default_str();
  app.add_option("--out", g.out, "Output file or directory (default root: $CLOUDMASK_OUT)");
  app.fallthrough();

  // import
  std::string imp_bands, imp_labels, imp_id = "scene";
  auto* imp = app.add_subcommand("import", "Convert raw band/label planes into PMBS/PMMR");
  imp->add_option("--bands-header", imp_bands, "Sidecar header of the band planes")->required();
  imp->add_option("--labels-header", imp_labels, "Sidecar header of the reference labels");
  imp->add_option("--id", imp_id, "Scene id used for output names")->capture_default_str();

  // synth
  int syn_count = 8;
  std::size_t syn_size = 256;
  std::string syn_land = "synthetic";
  auto* syn = app.add_subcommand("synth", "Generate synthetic scenes and a scene manifest");
  syn->add_option("--count", syn_count)->capture_default_str();
  syn->add_option("--size", syn_size, "Scene width and height")->capture_default_str();
  syn->add_option("--land-type", syn_land)->capture_default_str();

  // sample
  std::string smp_scene, smp_truth, smp_id = "scene";
  std::size_t smp_quota = 10000;
  bool smp_strict = false;
  auto* smp = app.add_subcommand("sample", "Subsample patch centres with the 2x2 grid split");
  smp->add_option("--scene", smp_scene)->required();
  smp->add_option("--truth", smp_truth)->required();
  smp->add_option("--id", smp_id)->capture_default_str();
  smp->add_option("--quota", smp_quota)->capture_default_str();
  smp->add_flag("--strict", smp_strict, "Exclude windows crossing a grid line");

  // train
  TrainConfig tc;
  NetworkConfig nc;
  std::string trn_scenes;
  std::vector<std::string> trn_samples;
  std::size_t trn_quota = 10000;
  auto* trn = app.add_subcommand("train", "Train a classifier on sampled patches");
  trn->add_option("--scenes", trn_scenes, "Scene manifest")->required();
  trn->add_option("--samples", trn_samples, "Sample manifests (default: sample every scene)");
  trn->add_option("--quota", trn_quota)->capture_default_str();
  add_train_options(trn, tc, nc);

  // infer
  std::string inf_scene, inf_ckpt;
  std::size_t inf_tile = 256;
  auto* inf = app.add_subcommand("infer", "Sliding-window mask inference over a scene");
  inf->add_option("--scene", inf_scene)->required();
  inf->add_option("--checkpoint", inf_ckpt)->required();
  inf->add_option("--tile", inf_tile, "Centres per forward batch")->capture_default_str();

  // evaluate
  std::vector<std::string> ev_pred, ev_truth;
  bool ev_micro = false, ev_json = false;
  auto* ev = app.add_subcommand("evaluate", "Metrics between predicted and reference masks");
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--truth", ev_truth)->required();
  ev->add_flag("--micro", ev_micro, "Pixel-weighted aggregation instead of per-scene means");
  ev->add_flag("--json", ev_json, "Print JSON instead of a table");

  // rethreshold
  std::string rt_mask;
  auto* rt = app.add_subcommand("rethreshold", "Relabel a mask from its stored confidences");
  rt->add_option("--mask", rt_mask)->required();

  // render
  std::string rn_mask, rn_scene;
  auto* rn = app.add_subcommand("render", "Write PNG renders of a mask (and RGB composite)");
  rn->add_option("--mask", rn_mask)->required();
  rn->add_option("--scene", rn_scene, "Scene for the RGB composite");

  // experiment
  ExperimentSpec spec;
  std::string ex_mode = "land_type_specific", ex_scenes;
  std::vector<std::size_t> ex_folds;
  bool ex_micro = false;
  auto* ex = app.add_subcommand("experiment", "Leave-one-out, all-land-type or ablation runs");
  ex->add_option("--mode", ex_mode, "land_type_specific | all_land_type | ablation")
      ->capture_default_str();
  ex->add_option("--scenes", ex_scenes, "Scene manifest")->required();
  ex->add_option("--repetitions", spec.repetitions)->capture_default_str();
  ex->add_option("--quota", spec.quota)->capture_default_str();
  ex->add_option("--folds", ex_folds, "Leave-one-out fold indices to run")->delimiter(',');
  ex->add_flag("--strict", spec.strict_grid);
  ex->add_flag("--micro", ex_micro);
  add_train_options(ex, spec.train, spec.network);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*imp) {
      const fs::path dir = output_path(g, "import");
      BandStack scene = import_bands(parse_import_header(imp_bands));
      if (!imp_labels.empty()) {
        MaskRaster truth = import_labels(parse_import_header(imp_labels));
        if (truth.width != scene.width || truth.height != scene.height) {
          throw DataError("label and band rasters differ in size");
        }
        ValidityPlane truth_valid(truth.width, truth.height, 1);
        for (std::size_t i = 0; i < truth.labels.size(); ++i) {
          truth_valid.data[i] = truth.labels[i] != MaskLabel::kNodata;
        }
        const ValidityPlane planes[] = {scene.validity(), truth_valid};
        const ValidityPlane valid = intersect_valid(planes);
        apply_validity(scene, valid);
        apply_validity(truth, valid);
        write_mask(truth, dir / (imp_id + ".pmmr"));
      }
      write_bandstack(scene, dir / (imp_id + ".pmbs"));
      std::printf("imported %s (%zux%zu, %zu bands)\n", imp_id.c_str(), scene.width,
                  scene.height, scene.bands.size());
    } else if (*syn) {
      const fs::path dir = output_path(g, "synth");
      std::vector<SceneEntry> entries;
      for (int i = 0; i < syn_count; ++i) {
        SynthSpec s;
        s.width = s.height = syn_size;
        s.seed = g.seed * 1000 + static_cast<std::uint64_t>(i) + 1;
        if (!g.bands.empty()) s.bands = parse_band_list(g.bands);
        const SyntheticScene sc = generate_synthetic(s);
        const std::string id = "synth" + std::to_string(i + 1);
        write_bandstack(sc.scene, dir / (id + ".pmbs"));
        write_mask(sc.truth, dir / (id + ".pmmr"));
        entries.push_back({id, syn_land, id + ".pmbs", id + ".pmmr"});
      }
      std::ofstream(dir / "scenes.txt") << format_scene_manifest(entries);
      std::printf("wrote %d scenes and %s\n", syn_count, (dir / "scenes.txt").c_str());
    } else if (*smp) {
      const fs::path out = output_path(g, smp_id + "_samples.txt");
      SampleOptions opt;
      opt.scene_id = smp_id;
      opt.quota = smp_quota;
      opt.seed = g.seed;
      opt.strict = smp_strict;
      const SampleSet set = subsample(read_bandstack(smp_scene), read_mask(smp_truth), opt);
      write_manifest(set, out);
      std::printf("%zu train, %zu val patches -> %s\n", set.count(Split::kTrain),
                  set.count(Split::kVal), out.c_str());
    } else if (*trn) {
      const fs::path dir = output_path(g, "train");
      const auto entries = read_scene_manifest(trn_scenes);
      std::map<std::string, BandStack> scenes;
      SampleSet samples;
      samples.seed = g.seed;
      samples.quota = trn_quota;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        scenes[entries[i].id] = read_bandstack(entries[i].scene_path);
        if (trn_samples.empty()) {
          SampleOptions opt;
          opt.scene_id = entries[i].id;
          opt.quota = trn_quota;
          opt.seed = derive_seed(g.seed, i);
          SampleSet s = subsample(scenes[entries[i].id], read_mask(entries[i].truth_path), opt);
          s.seed = g.seed;
          samples.append(s);
        }
      }
      for (std::size_t i = 0; i < trn_samples.size(); ++i) {
        SampleSet s = read_manifest(trn_samples[i]);
        if (i == 0) {
          samples.seed = s.seed;
          samples.quota = s.quota;
        }
        samples.append(s);
      }
      SceneLookup lookup;
      for (auto& [id, s] : scenes) lookup[id] = &s;
      nc.input_bands = band_names(g.bands);
      nc.input_channels = nc.input_bands.empty() ? scenes.begin()->second.bands.size()
                                                 : nc.input_bands.size();
      tc.seed = g.seed;
      TrainOptions topt;
      topt.out_dir = dir;
      topt.on_epoch = [](const EpochRecord& r) { print_epoch("train", r); };
      const TrainResult res = train(samples, lookup, nc, tc, topt);
      std::printf("best epoch %d, val loss %.6f -> %s\n", res.best_epoch, res.best_val_loss,
                  (dir / "best.pmck").c_str());
      if (res.aborted) {
        std::fprintf(stderr, "training aborted: %s\n", res.abort_reason.c_str());
        return kExitAborted;
      }
    } else if (*inf) {
      const fs::path out = output_path(g, fs::path(inf_scene).stem().string() + ".pmmr");
      InferenceConfig ic;
      ic.threshold = g.threshold;
      ic.threads = g.threads;
      ic.tile_size = inf_tile;
      ic.bands = band_names(g.bands);
      const MaskRaster mask = infer_scene(read_bandstack(inf_scene), fs::path(inf_ckpt), ic);
      write_mask(mask, out);
      std::printf("%zu clear, %zu cloud_shadow, %zu nodata -> %s\n",
                  mask.count(MaskLabel::kClear), mask.count(MaskLabel::kCloudShadow),
                  mask.count(MaskLabel::kNodata), out.c_str());
    } else if (*ev) {
      if (ev_pred.size() != ev_truth.size()) {
        throw ConfigError("--pred and --truth need the same number of files");
      }
      std::vector<std::pair<std::string, MetricsReport>> rows;
      std::vector<MetricsReport> reports;
      for (std::size_t i = 0; i < ev_pred.size(); ++i) {
        reports.push_back(evaluate(read_mask(ev_pred[i]), read_mask(ev_truth[i])));
        rows.emplace_back(fs::path(ev_pred[i]).stem().string(), reports.back());
      }
      const MetricsReport agg =
          aggregate(reports, ev_micro ? Averaging::kMicro : Averaging::kMacro);
      if (reports.size() > 1) rows.emplace_back("average", agg);
      std::string text = ev_json ? to_json(agg) + "\n" : format_table(rows);
      std::fputs(text.c_str(), stdout);
      if (!g.out.empty()) std::ofstream(g.out) << (ev_json ? text : to_json(agg) + "\n");
    } else if (*rt) {
      const fs::path out = output_path(g, fs::path(rt_mask).stem().string() + "_rethreshold.pmmr");
      const MaskRaster mask = apply_threshold(read_mask(rt_mask), g.threshold);
      write_mask(mask, out);
      std::printf("%zu cloud_shadow pixels at threshold %g -> %s\n",
                  mask.count(MaskLabel::kCloudShadow), g.threshold, out.c_str());
    } else if (*rn) {
      const fs::path prefix = output_path(g, fs::path(rn_mask).stem().string());
      std::optional<BandStack> scene;
      if (!rn_scene.empty()) scene = read_bandstack(rn_scene);
      for (const auto& p : render_png(read_mask(rn_mask), scene ? &*scene : nullptr, prefix)) {
        std::printf("%s\n", p.c_str());
      }
    } else if (*ex) {
      spec.mode = parse_mode(ex_mode);
      spec.scenes = read_scene_manifest(ex_scenes);
      spec.bands = g.bands.empty() ? std::vector<BandId>{} : parse_band_list(g.bands);
      spec.drop = g.drop.empty() ? std::vector<BandId>{} : parse_band_list(g.drop);
      spec.master_seed = g.seed;
      spec.inference.threshold = g.threshold;
      spec.inference.threads = g.threads;
      spec.only_folds = ex_folds;
      spec.averaging = ex_micro ? Averaging::kMicro : Averaging::kMacro;
      spec.out_dir = output_path(g, std::string(mode_name(spec.mode)));
      spec.keep_masks = false;
      spec.on_epoch = print_epoch;
      spec.log = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
      const ExperimentResult res = run_experiment(spec);
      std::fputs(res.table.c_str(), stdout);
      if (res.any_aborted) {
        for (const auto& r : res.runs) {
          if (r.aborted) std::fprintf(stderr, "aborted %s: %s\n", r.name.c_str(), r.reason.c_str());
        }
        return kExitAborted;
      }
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitConfig;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
