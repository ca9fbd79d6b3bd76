#include "cloudmask/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "cloudmask/errors.hpp"

namespace cloudmask {

namespace {

constexpr std::string_view kBandNames[] = {"ultra_blue", "blue",  "green", "red",
                                           "nir",        "swir1", "swir2"};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string_view band_name(BandId band) {
  return kBandNames[static_cast<std::size_t>(band)];
}

BandId parse_band(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kBandNames); ++i) {
    if (kBandNames[i] == name) return static_cast<BandId>(i);
  }
  throw ConfigError("unknown band identifier \"" + std::string(name) + "\"");
}

std::vector<BandId> parse_band_list(std::string_view list) {
  std::vector<BandId> out;
  for (const auto& item : split(list, ',')) {
    if (!item.empty()) out.push_back(parse_band(item));
  }
  return out;
}

std::string format_band_list(std::span<const BandId> bands) {
  std::string s;
  for (BandId b : bands) {
    if (!s.empty()) s += ',';
    s += band_name(b);
  }
  return s;
}

// ---------------------------------------------------------------------------
// BandStack / MaskRaster

BandStack::BandStack(std::size_t w, std::size_t h, std::vector<BandId> ids)
    : width(w), height(h), bands(std::move(ids)) {
  planes.assign(bands.size(), std::vector<float>(w * h, 0.0f));
  nodata.assign(w * h, 0);
}

std::optional<std::size_t> BandStack::band_index(BandId band) const {
  const auto it = std::find(bands.begin(), bands.end(), band);
  if (it == bands.end()) return std::nullopt;
  return static_cast<std::size_t>(it - bands.begin());
}

std::vector<std::size_t> BandStack::band_indices(std::span<const BandId> wanted) const {
  std::vector<std::size_t> out;
  for (BandId b : wanted) {
    const auto idx = band_index(b);
    if (!idx) {
      throw ConfigError("scene has no band " + std::string(band_name(b)));
    }
    out.push_back(*idx);
  }
  return out;
}

ValidityPlane BandStack::validity() const {
  ValidityPlane v(width, height);
  for (std::size_t i = 0; i < nodata.size(); ++i) v.data[i] = nodata[i] ? 0 : 1;
  return v;
}

void BandStack::validate() const {
  const std::size_t n = pixel_count();
  if (bands.empty()) throw ContractViolation("band stack has no bands");
  if (planes.size() != bands.size()) {
    throw ContractViolation("band stack plane count differs from band list");
  }
  for (const auto& p : planes) {
    if (p.size() != n) throw ContractViolation("band plane size differs from width*height");
  }
  if (nodata.size() != n) throw ContractViolation("nodata plane size differs from width*height");
  std::set<BandId> seen(bands.begin(), bands.end());
  if (seen.size() != bands.size()) throw ContractViolation("duplicate band identifiers");
  for (std::size_t b = 0; b < planes.size(); ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      if (nodata[i]) continue;
      const float v = planes[b][i];
      if (!std::isfinite(v) || v < kReflectanceMin || v > kReflectanceMax) {
        throw DataError("band " + std::string(band_name(bands[b])) +
                        " pixel (" + std::to_string(i / width) + "," +
                        std::to_string(i % width) + ") = " + std::to_string(v) +
                        " lies outside the valid reflectance range");
      }
    }
  }
}

std::size_t MaskRaster::count(MaskLabel label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

void MaskRaster::validate() const {
  if (labels.size() != width * height) {
    throw ContractViolation("mask label plane size differs from width*height");
  }
  for (MaskLabel l : labels) {
    if (l != MaskLabel::kClear && l != MaskLabel::kCloudShadow && l != MaskLabel::kNodata) {
      throw DataError("mask contains unknown label code " +
                      std::to_string(static_cast<int>(l)));
    }
  }
  if (confidence) {
    if (confidence->size() != labels.size()) {
      throw ContractViolation("confidence plane size differs from label plane");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const float c = (*confidence)[i];
      if (labels[i] == MaskLabel::kNodata) {
        if (!std::isnan(c)) throw DataError("confidence defined on a nodata pixel");
      } else if (!(c >= 0.0f && c <= 1.0f)) {
        throw DataError("confidence outside [0,1] on a labeled pixel");
      }
    }
  }
}

bool operator==(const MaskRaster& a, const MaskRaster& b) {
  if (a.width != b.width || a.height != b.height || a.labels != b.labels) return false;
  if (a.confidence.has_value() != b.confidence.has_value()) return false;
  if (!a.confidence) return true;
  return a.confidence->size() == b.confidence->size() &&
         std::memcmp(a.confidence->data(), b.confidence->data(),
                     a.confidence->size() * sizeof(float)) == 0;
}

// ---------------------------------------------------------------------------
// Valid-region preparation

ValidityPlane intersect_valid(std::span<const ValidityPlane> planes) {
  if (planes.empty()) throw ContractViolation("intersect_valid needs at least one plane");
  ValidityPlane out = planes.front();
  for (auto& v : out.data) v = v ? 1 : 0;
  for (std::size_t k = 1; k < planes.size(); ++k) {
    const auto& p = planes[k];
    if (p.width != out.width || p.height != out.height) {
      throw ContractViolation("intersect_valid: plane dimensions differ");
    }
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      out.data[i] = (out.data[i] && p.data[i]) ? 1 : 0;
    }
  }
  return out;
}

void apply_validity(BandStack& scene, const ValidityPlane& valid) {
  if (valid.width != scene.width || valid.height != scene.height) {
    throw ContractViolation("validity plane does not match scene dimensions");
  }
  for (std::size_t i = 0; i < valid.data.size(); ++i) {
    if (!valid.data[i]) scene.nodata[i] = 1;
  }
}

void apply_validity(MaskRaster& mask, const ValidityPlane& valid) {
  if (valid.width != mask.width || valid.height != mask.height) {
    throw ContractViolation("validity plane does not match mask dimensions");
  }
  for (std::size_t i = 0; i < valid.data.size(); ++i) {
    if (valid.data[i]) continue;
    mask.labels[i] = MaskLabel::kNodata;
    if (mask.confidence) (*mask.confidence)[i] = std::numeric_limits<float>::quiet_NaN();
  }
}

MaskRaster binarize_labels(const Plane<std::uint8_t>& raw) {
  MaskRaster out(raw.width, raw.height);
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    switch (static_cast<RawClass>(raw.data[i])) {
      case RawClass::kClear: out.labels[i] = MaskLabel::kClear; break;
      case RawClass::kCloud:
      case RawClass::kShadow: out.labels[i] = MaskLabel::kCloudShadow; break;
      case RawClass::kNodata: out.labels[i] = MaskLabel::kNodata; break;
      default:
        throw DataError("unknown raw class code " + std::to_string(raw.data[i]) +
                        " at pixel " + std::to_string(i));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Containers

namespace {

constexpr std::size_t kIdWidth = 16;
constexpr std::size_t kFixedHeader = 4 + 2 + 4 + 4 + 2;

struct ContainerHeader {
  std::uint16_t version;
  std::uint32_t width;
  std::uint32_t height;
  std::uint16_t planes;
};

// Reads the fixed header and checks length, then checksum.
ContainerHeader open_container(const std::vector<std::uint8_t>& bytes,
                               std::string_view magic,
                               std::size_t (*payload)(const ContainerHeader&,
                                                      const std::vector<std::uint8_t>&)) {
  const std::uint16_t version = detail::check_envelope(bytes, magic);
  if (version != kContainerVersion) {
    throw VersionError("unsupported " + std::string(magic) + " version " +
                           std::to_string(version),
                       4);
  }
  if (bytes.size() < kFixedHeader) throw TruncatedError(kFixedHeader, bytes.size());
  ContainerHeader h{};
  h.version = version;
  std::memcpy(&h.width, bytes.data() + 6, 4);
  std::memcpy(&h.height, bytes.data() + 10, 4);
  std::memcpy(&h.planes, bytes.data() + 14, 2);
  const std::size_t expected = kFixedHeader + kIdWidth * h.planes + payload(h, bytes) + 8;
  if (bytes.size() < expected) throw TruncatedError(expected, bytes.size());
  if (bytes.size() > expected) {
    throw FormatError("unexpected trailing bytes: expected length " +
                          std::to_string(expected) + ", found " +
                          std::to_string(bytes.size()),
                      expected);
  }
  detail::verify_checksum(bytes);
  return h;
}

void write_header(detail::ByteWriter& w, std::string_view magic, std::size_t width,
                  std::size_t height, std::size_t planes) {
  w.bytes(magic.data(), 4);
  w.put<std::uint16_t>(kContainerVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(height));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(planes));
}

std::size_t bandstack_payload(const ContainerHeader& h, const std::vector<std::uint8_t>&) {
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  return n * 4 * h.planes + n;
}

std::size_t mask_payload(const ContainerHeader& h, const std::vector<std::uint8_t>&) {
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  return h.planes >= 2 ? n + 4 * n : n;
}

}  // namespace

std::vector<std::uint8_t> encode_bandstack(const BandStack& stack) {
  stack.validate();
  detail::ByteWriter w;
  write_header(w, "PMBS", stack.width, stack.height, stack.bands.size());
  for (BandId b : stack.bands) w.fixed_string(band_name(b), kIdWidth);
  for (const auto& plane : stack.planes) w.bytes(plane.data(), plane.size() * 4);
  for (std::uint8_t nd : stack.nodata) w.put<std::uint8_t>(nd ? 0 : 1);
  w.append_checksum();
  return std::move(w.buffer());
}

BandStack decode_bandstack(const std::vector<std::uint8_t>& bytes) {
  const ContainerHeader h = open_container(bytes, "PMBS", bandstack_payload);
  detail::ByteReader r(bytes, bytes.size() - 8);
  char skip[kFixedHeader];
  r.bytes(skip, kFixedHeader);
  if (h.planes == 0) throw FormatError("band stack declares no bands", 14);
  std::vector<BandId> ids;
  for (std::uint16_t i = 0; i < h.planes; ++i) {
    const std::size_t at = r.position();
    const std::string name = r.fixed_string(kIdWidth);
    try {
      ids.push_back(parse_band(name));
    } catch (const ConfigError&) {
      throw FormatError("unknown band identifier \"" + name + "\"", at);
    }
  }
  BandStack s(h.width, h.height, std::move(ids));
  for (auto& plane : s.planes) r.bytes(plane.data(), plane.size() * 4);
  for (auto& nd : s.nodata) {
    const std::size_t at = r.position();
    const auto v = r.get<std::uint8_t>();
    if (v > 1) throw FormatError("validity byte must be 0 or 1", at);
    nd = v ? 0 : 1;
  }
  try {
    s.validate();
  } catch (const ContractViolation& e) {
    throw FormatError(e.what(), kFixedHeader);
  }
  return s;
}

std::vector<std::uint8_t> encode_mask(const MaskRaster& mask) {
  mask.validate();
  detail::ByteWriter w;
  write_header(w, "PMMR", mask.width, mask.height, mask.confidence ? 2 : 1);
  w.fixed_string("labels", kIdWidth);
  if (mask.confidence) w.fixed_string("confidence", kIdWidth);
  w.bytes(mask.labels.data(), mask.labels.size());
  if (mask.confidence) w.bytes(mask.confidence->data(), mask.confidence->size() * 4);
  w.append_checksum();
  return std::move(w.buffer());
}

MaskRaster decode_mask(const std::vector<std::uint8_t>& bytes) {
  const ContainerHeader h = open_container(bytes, "PMMR", mask_payload);
  if (h.planes < 1 || h.planes > 2) {
    throw FormatError("mask must hold 1 or 2 planes, found " + std::to_string(h.planes), 14);
  }
  detail::ByteReader r(bytes, bytes.size() - 8);
  char skip[kFixedHeader];
  r.bytes(skip, kFixedHeader);
  const std::size_t at = r.position();
  if (r.fixed_string(kIdWidth) != "labels") throw FormatError("first mask plane must be labels", at);
  if (h.planes == 2 && r.fixed_string(kIdWidth) != "confidence") {
    throw FormatError("second mask plane must be confidence", at + kIdWidth);
  }
  MaskRaster m(h.width, h.height);
  r.bytes(m.labels.data(), m.labels.size());
  if (h.planes == 2) {
    m.confidence.emplace(m.labels.size());
    r.bytes(m.confidence->data(), m.confidence->size() * 4);
  }
  try {
    m.validate();
  } catch (const std::exception& e) {
    throw FormatError(e.what(), kFixedHeader);
  }
  return m;
}

void write_bandstack(const BandStack& stack, const std::filesystem::path& path) {
  detail::write_file(path, encode_bandstack(stack));
}

BandStack read_bandstack(const std::filesystem::path& path) {
  return decode_bandstack(detail::read_file(path));
}

void write_mask(const MaskRaster& mask, const std::filesystem::path& path) {
  detail::write_file(path, encode_mask(mask));
}

MaskRaster read_mask(const std::filesystem::path& path) {
  return decode_mask(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Raw import

ImportHeader parse_import_header(const std::filesystem::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw ConfigError("cannot open import header " + header_path.string());
  ImportHeader h;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(header_path.string() + ":" + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    try {
      if (key == "kind") {
        h.kind = value;
      } else if (key == "width") {
        h.width = std::stoul(value);
      } else if (key == "height") {
        h.height = std::stoul(value);
      } else if (key == "bands") {
        h.bands = parse_band_list(value);
      } else if (key == "data_type") {
        h.data_type = value;
      } else if (key == "scale") {
        h.scale = std::stod(value);
      } else if (key == "nodata_value") {
        h.nodata_value = std::stod(value);
      } else if (key == "data_file") {
        h.data_file = value;
      } else if (key == "class_codes") {
        h.class_codes.clear();
        for (const auto& item : split(value, ',')) {
          const auto colon = item.find(':');
          if (colon == std::string::npos) throw ConfigError("class_codes entries are name:code");
          const std::string name = trim(std::string_view(item).substr(0, colon));
          const int code = std::stoi(item.substr(colon + 1));
          RawClass cls;
          if (name == "clear") cls = RawClass::kClear;
          else if (name == "cloud") cls = RawClass::kCloud;
          else if (name == "shadow") cls = RawClass::kShadow;
          else if (name == "nodata") cls = RawClass::kNodata;
          else throw ConfigError("unknown class name " + name);
          h.class_codes.emplace_back(cls, code);
        }
      } else {
        throw ConfigError("unknown header key " + key);
      }
    } catch (const std::logic_error&) {
      throw ConfigError(header_path.string() + ":" + std::to_string(line_no) +
                        ": bad value for " + key);
    }
  }
  if (h.width == 0 || h.height == 0) throw ConfigError("import header needs width and height");
  if (h.data_file.empty()) throw ConfigError("import header needs data_file");
  if (h.data_file.is_relative()) h.data_file = header_path.parent_path() / h.data_file;
  if (h.kind != "bands" && h.kind != "labels") throw ConfigError("kind must be bands or labels");
  if (h.kind == "bands" && h.bands.empty()) throw ConfigError("import header needs a band list");
  if (!(h.scale > 0.0)) throw ConfigError("scale must be positive");
  return h;
}

namespace {

std::size_t sample_size(const std::string& type) {
  if (type == "int16" || type == "uint16") return 2;
  if (type == "float32") return 4;
  if (type == "uint8") return 1;
  throw ConfigError("unsupported data_type " + type);
}

double read_sample(const std::uint8_t* p, const std::string& type) {
  if (type == "int16") {
    std::int16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  if (type == "uint16") {
    std::uint16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  if (type == "float32") {
    float v;
    std::memcpy(&v, p, 4);
    return v;
  }
  return *p;
}

std::vector<std::uint8_t> read_raw(const ImportHeader& h, std::size_t planes) {
  const std::vector<std::uint8_t> raw = detail::read_file(h.data_file);
  const std::size_t expected = h.width * h.height * planes * sample_size(h.data_type);
  if (raw.size() != expected) {
    throw DataError(h.data_file.string() + " holds " + std::to_string(raw.size()) +
                    " bytes, header implies " + std::to_string(expected));
  }
  return raw;
}

}  // namespace

BandStack import_bands(const ImportHeader& h) {
  const std::size_t ss = sample_size(h.data_type);
  const std::vector<std::uint8_t> raw = read_raw(h, h.bands.size());
  BandStack s(h.width, h.height, h.bands);
  const std::size_t n = s.pixel_count();
  for (std::size_t b = 0; b < h.bands.size(); ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = read_sample(raw.data() + (b * n + i) * ss, h.data_type);
      const double r = v / h.scale;
      const bool sentinel = h.nodata_value && v == *h.nodata_value;
      if (sentinel || !std::isfinite(r) || r < kReflectanceMin || r > kReflectanceMax) {
        s.nodata[i] = 1;
      } else {
        s.planes[b][i] = static_cast<float>(r);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!s.nodata[i]) continue;
    for (auto& plane : s.planes) plane[i] = 0.0f;
  }
  s.validate();
  return s;
}

MaskRaster import_labels(const ImportHeader& h) {
  const std::size_t ss = sample_size(h.data_type);
  const std::vector<std::uint8_t> raw = read_raw(h, 1);
  Plane<std::uint8_t> classes(h.width, h.height);
  for (std::size_t i = 0; i < classes.data.size(); ++i) {
    const double v = read_sample(raw.data() + i * ss, h.data_type);
    bool matched = false;
    for (const auto& [cls, code] : h.class_codes) {
      if (v == code) {
        classes.data[i] = static_cast<std::uint8_t>(cls);
        matched = true;
        break;
      }
    }
    if (!matched) {
      throw DataError("unknown class code " + std::to_string(v) + " at pixel " +
                      std::to_string(i));
    }
  }
  return binarize_labels(classes);
}

}  // namespace cloudmask
