#include "cloudmask/sampler.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "cloudmask/errors.hpp"
#include "cloudmask/ops.hpp"

namespace cloudmask {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split \"" + std::string(s) + "\"");
}

std::string_view label_name(MaskLabel l) {
  switch (l) {
    case MaskLabel::kClear: return "clear";
    case MaskLabel::kCloudShadow: return "cloud_shadow";
    case MaskLabel::kNodata: return "nodata";
  }
  return "nodata";
}

MaskLabel parse_label(std::string_view s) {
  if (s == "clear") return MaskLabel::kClear;
  if (s == "cloud_shadow") return MaskLabel::kCloudShadow;
  if (s == "nodata") return MaskLabel::kNodata;
  throw DataError("unknown label \"" + std::string(s) + "\"");
}

std::vector<Center> enumerate_valid(std::span<const std::uint8_t> nodata,
                                    std::size_t width, std::size_t height,
                                    std::size_t extent) {
  if (nodata.size() != width * height) {
    throw ContractViolation("nodata plane size differs from width*height");
  }
  std::vector<Center> out;
  if (width < extent || height < extent) return out;
  // Summed-area table of nodata flags, one row and column of padding.
  const std::size_t sw = width + 1;
  std::vector<std::uint32_t> sat((height + 1) * sw, 0);
  for (std::size_t r = 0; r < height; ++r) {
    std::uint32_t run = 0;
    for (std::size_t c = 0; c < width; ++c) {
      run += nodata[r * width + c] ? 1u : 0u;
      sat[(r + 1) * sw + c + 1] = sat[r * sw + c + 1] + run;
    }
  }
  const std::size_t radius = extent / 2;
  for (std::size_t r0 = 0; r0 + extent <= height; ++r0) {
    for (std::size_t c0 = 0; c0 + extent <= width; ++c0) {
      const std::uint32_t bad = sat[(r0 + extent) * sw + c0 + extent] -
                                sat[r0 * sw + c0 + extent] -
                                sat[(r0 + extent) * sw + c0] + sat[r0 * sw + c0];
      if (bad == 0) out.push_back({r0 + radius, c0 + radius});
    }
  }
  return out;
}

std::vector<Center> enumerate_valid(const BandStack& scene, std::size_t extent) {
  return enumerate_valid(scene.nodata, scene.width, scene.height, extent);
}

bool window_is_valid(const BandStack& scene, std::size_t row, std::size_t col,
                     std::size_t extent) {
  const std::size_t radius = extent / 2;
  if (row < radius || col < radius || row + radius >= scene.height ||
      col + radius >= scene.width) {
    return false;
  }
  for (std::size_t r = row - radius; r <= row + radius; ++r) {
    for (std::size_t c = col - radius; c <= col + radius; ++c) {
      if (scene.is_nodata(r, c)) return false;
    }
  }
  return true;
}

bool GridAssignment::window_inside_quadrant(std::size_t row, std::size_t col,
                                            std::size_t radius) const {
  const bool top = row < row_split;
  const bool left = col < col_split;
  const bool rows_ok = top ? row + radius < row_split : row >= row_split + radius;
  const bool cols_ok = left ? col + radius < col_split : col >= col_split + radius;
  return rows_ok && cols_ok;
}

GridAssignment grid_split(std::size_t height, std::size_t width, std::uint64_t seed) {
  if (height < 30 || width < 30) {
    throw ConfigError("grid split needs a scene of at least 30x30, got " +
                      std::to_string(width) + "x" + std::to_string(height));
  }
  GridAssignment g;
  g.height = height;
  g.width = width;
  g.row_split = (height + 1) / 2;
  g.col_split = (width + 1) / 2;
  Rng rng(seed);
  g.val_quadrant = std::uniform_int_distribution<int>(0, 3)(rng);
  return g;
}

std::size_t SampleSet::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(
      patches.begin(), patches.end(), [s](const PatchRef& p) { return p.split == s; }));
}

void SampleSet::append(const SampleSet& other) {
  if (scenes.empty() && patches.empty()) {
    seed = other.seed;
    quota = other.quota;
  }
  scenes.insert(scenes.end(), other.scenes.begin(), other.scenes.end());
  patches.insert(patches.end(), other.patches.begin(), other.patches.end());
}

namespace {

// Partial Fisher-Yates: the first `take` entries become a uniform sample
// without replacement; returned sorted row-major.
std::vector<Center> draw(std::vector<Center> pool, std::size_t take, Rng& rng) {
  take = std::min(take, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
    std::swap(pool[i], pool[d(rng)]);
  }
  pool.resize(take);
  std::sort(pool.begin(), pool.end(), [](const Center& a, const Center& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  return pool;
}

}  // namespace

SampleSet subsample(const BandStack& scene, const MaskRaster& truth,
                    const SampleOptions& options) {
  if (truth.width != scene.width || truth.height != scene.height) {
    throw ContractViolation("truth mask does not match scene dimensions");
  }
  if (options.scene_id.empty() ||
      options.scene_id.find_first_of(" \t\n") != std::string::npos) {
    throw ConfigError("scene id must be a nonempty token without whitespace");
  }
  std::vector<Center> eligible;
  for (const Center& c : enumerate_valid(scene)) {
    if (truth.at(c.row, c.col) != MaskLabel::kNodata) eligible.push_back(c);
  }
  if (eligible.empty()) {
    throw DataError("scene " + options.scene_id + " has no valid 15x15 window");
  }

  SampleSet set;
  set.seed = options.seed;
  set.quota = options.quota;
  SceneSampling info;
  info.scene_id = options.scene_id;
  Rng rng(options.seed);

  auto emit = [&](const std::vector<Center>& centers, Split split) {
    for (const Center& c : centers) {
      set.patches.push_back({options.scene_id, c.row, c.col, split, truth.at(c.row, c.col)});
    }
  };

  if (options.whole_scene) {
    info.whole_scene = options.whole_scene;
    info.available[0] = eligible.size();
    if (eligible.size() < options.quota) info.shortfall[0] = options.quota - eligible.size();
    emit(draw(std::move(eligible), options.quota, rng), *options.whole_scene);
  } else {
    const GridAssignment grid = grid_split(scene.height, scene.width, rng());
    info.grid = grid;
    std::array<std::vector<Center>, 4> pools;
    for (const Center& c : eligible) {
      if (options.strict && !grid.window_inside_quadrant(c.row, c.col)) continue;
      pools[grid.quadrant_of(c.row, c.col)].push_back(c);
    }
    for (int q = 0; q < 4; ++q) {
      const std::size_t share = options.quota / 4 + (static_cast<std::size_t>(q) < options.quota % 4 ? 1 : 0);
      info.available[q] = pools[q].size();
      if (pools[q].size() < share) info.shortfall[q] = share - pools[q].size();
      emit(draw(std::move(pools[q]), share, rng),
           q == grid.val_quadrant ? Split::kVal : Split::kTrain);
    }
  }
  set.scenes.push_back(info);
  return set;
}

void extract_into(const BandStack& scene, std::size_t row, std::size_t col,
                  std::span<const std::size_t> band_indices, double* dst) {
  if (!window_is_valid(scene, row, col)) {
    throw ContractViolation("patch window at (" + std::to_string(row) + "," +
                            std::to_string(col) +
                            ") is out of bounds or touches nodata");
  }
  const std::size_t r0 = row - kPatchRadius;
  const std::size_t c0 = col - kPatchRadius;
  for (std::size_t b : band_indices) {
    if (b >= scene.planes.size()) throw ContractViolation("band index out of range");
    const float* plane = scene.planes[b].data();
    for (std::size_t r = 0; r < kPatchExtent; ++r) {
      const float* src = plane + (r0 + r) * scene.width + c0;
      for (std::size_t c = 0; c < kPatchExtent; ++c) *dst++ = src[c];
    }
  }
}

std::vector<std::size_t> resolve_input_bands(const BandStack& scene,
                                             std::span<const std::string> names,
                                             std::size_t channels) {
  std::vector<std::size_t> idx;
  if (names.empty()) {
    for (std::size_t b = 0; b < scene.bands.size(); ++b) idx.push_back(b);
  } else {
    std::vector<BandId> ids;
    for (const auto& n : names) ids.push_back(parse_band(n));
    idx = scene.band_indices(ids);
  }
  if (idx.size() != channels) {
    throw ConfigError("network expects " + std::to_string(channels) +
                      " input channels but the band selection gives " +
                      std::to_string(idx.size()));
  }
  return idx;
}

Tensor extract(const BandStack& scene, std::size_t row, std::size_t col,
               std::span<const std::size_t> band_indices) {
  Tensor t({band_indices.size(), kPatchExtent, kPatchExtent});
  extract_into(scene, row, col, band_indices, t.data().data());
  return t;
}

// ---------------------------------------------------------------------------
// Manifest

std::string format_manifest(const SampleSet& set) {
  std::ostringstream os;
  os << "# cloudmask sample manifest v1\n";
  os << "seed " << set.seed << "\n";
  os << "quota " << set.quota << "\n";
  for (const auto& s : set.scenes) {
    os << "scene " << s.scene_id;
    if (s.grid) {
      os << " grid " << s.grid->height << ' ' << s.grid->width << ' '
         << s.grid->row_split << ' ' << s.grid->col_split << ' ' << s.grid->val_quadrant;
    } else {
      os << " whole " << split_name(*s.whole_scene);
    }
    os << " available";
    for (auto a : s.available) os << ' ' << a;
    os << " shortfall";
    for (auto a : s.shortfall) os << ' ' << a;
    os << "\n";
  }
  for (const auto& p : set.patches) {
    os << "patch " << p.scene_id << ' ' << p.row << ' ' << p.col << ' '
       << split_name(p.split) << ' ' << label_name(p.label) << "\n";
  }
  return os.str();
}

SampleSet parse_manifest(const std::string& text) {
  SampleSet set;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    auto fail = [&](const std::string& why) {
      return DataError("manifest line " + std::to_string(line_no) + ": " + why);
    };
    if (kind == "seed") {
      ls >> set.seed;
    } else if (kind == "quota") {
      ls >> set.quota;
    } else if (kind == "scene") {
      SceneSampling s;
      std::string mode;
      ls >> s.scene_id >> mode;
      if (mode == "grid") {
        GridAssignment g;
        ls >> g.height >> g.width >> g.row_split >> g.col_split >> g.val_quadrant;
        s.grid = g;
      } else if (mode == "whole") {
        std::string split;
        ls >> split;
        s.whole_scene = parse_split(split);
      } else {
        throw fail("unknown scene mode " + mode);
      }
      std::string word;
      ls >> word;
      if (word != "available") throw fail("expected available counts");
      for (auto& a : s.available) ls >> a;
      ls >> word;
      if (word != "shortfall") throw fail("expected shortfall counts");
      for (auto& a : s.shortfall) ls >> a;
      set.scenes.push_back(std::move(s));
    } else if (kind == "patch") {
      PatchRef p;
      std::string split, label;
      ls >> p.scene_id >> p.row >> p.col >> split >> label;
      p.split = parse_split(split);
      p.label = parse_label(label);
      set.patches.push_back(std::move(p));
    } else {
      throw fail("unknown record " + kind);
    }
    if (ls.fail()) throw fail("malformed record");
  }
  return set;
}

void write_manifest(const SampleSet& set, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_manifest(set);
}

SampleSet read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

}  // namespace cloudmask
