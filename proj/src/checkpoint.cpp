#include "cloudmask/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "binio.hpp"
#include "cloudmask/errors.hpp"

namespace cloudmask {
namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write beside the destination and rename so readers never observe a
  // partial file.
  std::filesystem::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

namespace {

constexpr char kMagic[] = "PMCK";

void put_array(detail::ByteWriter& w, std::span<const double> v) {
  for (double x : v) w.put<float>(static_cast<float>(x));
}

std::vector<double> get_array(detail::ByteReader& r, std::size_t n) {
  r.need(n * 4);
  std::vector<double> v(n);
  for (auto& x : v) x = r.get<float>();
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params) {
  params.validate_structure();
  const NetworkConfig& cfg = params.config();
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint64_t>(0);  // total length, patched below
  w.put<std::int32_t>(cfg.depth_param);
  for (std::size_t width : cfg.stage_widths) w.put<std::uint32_t>(static_cast<std::uint32_t>(width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.input_channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.input_extent));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.num_classes));
  w.put<double>(cfg.dropout_keep);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(cfg.input_bands.size()));
  for (const auto& b : cfg.input_bands) w.short_string(b);

  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    const LayerParams& p = e.params;
    w.short_string(e.spec.key);
    w.put<std::uint8_t>(static_cast<std::uint8_t>((p.bias ? 1 : 0) | (p.norm ? 2 : 0)));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(p.weight.rank()));
    for (std::size_t d : p.weight.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    put_array(w, p.weight.data());
    if (p.bias) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(p.bias->size()));
      put_array(w, p.bias->data());
    }
    if (p.norm) {
      const NormParams& n = *p.norm;
      w.put<std::uint32_t>(static_cast<std::uint32_t>(n.channels()));
      w.put<double>(n.momentum);
      w.put<double>(n.epsilon);
      put_array(w, n.scale);
      put_array(w, n.shift);
      put_array(w, n.running_mean);
      put_array(w, n.running_var);
    }
  }
  auto& buf = w.buffer();
  const std::uint64_t total = buf.size() + 8;
  std::memcpy(buf.data() + 6, &total, 8);
  w.append_checksum();
  return std::move(w.buffer());
}

ParameterSet decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const std::uint16_t version = detail::check_envelope(bytes, "PMCK");
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  if (bytes.size() < 14) throw TruncatedError(14, bytes.size());
  std::uint64_t total;
  std::memcpy(&total, bytes.data() + 6, 8);
  if (total != bytes.size()) {
    if (total > bytes.size()) throw TruncatedError(total, bytes.size());
    throw FormatError("trailing bytes after checkpoint payload", total);
  }
  detail::verify_checksum(bytes);

  detail::ByteReader r(bytes, bytes.size() - 8);
  char magic[4];
  r.bytes(magic, 4);
  r.get<std::uint16_t>();
  r.get<std::uint64_t>();
  NetworkConfig cfg;
  cfg.depth_param = r.get<std::int32_t>();
  for (auto& width : cfg.stage_widths) width = r.get<std::uint32_t>();
  cfg.input_channels = r.get<std::uint32_t>();
  cfg.input_extent = r.get<std::uint32_t>();
  cfg.num_classes = r.get<std::uint32_t>();
  cfg.dropout_keep = r.get<double>();
  const auto nbands = r.get<std::uint16_t>();
  for (std::uint16_t i = 0; i < nbands; ++i) cfg.input_bands.push_back(r.short_string());

  std::vector<LayerSpec> layout;
  try {
    layout = layer_layout(cfg);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid network configuration: ") + e.what(),
                      r.position());
  }
  const auto nlayers = r.get<std::uint32_t>();
  if (nlayers != layout.size()) {
    throw FormatError("checkpoint holds " + std::to_string(nlayers) +
                          " layers, configuration implies " +
                          std::to_string(layout.size()),
                      r.position());
  }
  ParameterSet params(cfg);
  for (const LayerSpec& spec : layout) {
    const std::size_t at = r.position();
    const std::string key = r.short_string();
    if (key != spec.key) {
      throw FormatError("unexpected layer " + key + ", expected " + spec.key, at);
    }
    const auto flags = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint16_t>();
    if (rank < 1 || rank > 4) throw FormatError("bad tensor rank", r.position());
    Tensor::Shape shape(rank);
    for (auto& d : shape) {
      d = r.get<std::uint32_t>();
      if (d == 0) throw FormatError("zero tensor extent", r.position());
    }
    LayerParams p;
    p.weight = Tensor(shape, get_array(r, shape_size(shape)));
    if (flags & 1) {
      const auto n = r.get<std::uint32_t>();
      p.bias = Tensor({n}, get_array(r, n));
    }
    if (flags & 2) {
      const auto n = r.get<std::uint32_t>();
      NormParams norm(n);
      norm.momentum = r.get<double>();
      norm.epsilon = r.get<double>();
      norm.scale = get_array(r, n);
      norm.shift = get_array(r, n);
      norm.running_mean = get_array(r, n);
      norm.running_var = get_array(r, n);
      p.norm = std::move(norm);
    }
    params.entries().push_back({spec, std::move(p)});
  }
  if (r.remaining() != 0) {
    throw FormatError("unparsed bytes before checksum", r.position());
  }
  try {
    params.validate_structure();
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("inconsistent checkpoint: ") + e.what(), 0);
  }
  return params;
}

void write_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(params));
}

ParameterSet read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

ParameterSet round_to_storage(const ParameterSet& params) {
  ParameterSet out = params;
  auto round = [](std::span<double> v) {
    for (double& x : v) x = static_cast<float>(x);
  };
  out.for_each_learnable([&](const std::string&, std::span<double> v) { round(v); });
  for (auto& e : out.entries()) {
    if (e.params.norm) {
      round(e.params.norm->running_mean);
      round(e.params.norm->running_var);
    }
  }
  return out;
}

}  // namespace cloudmask
