#include <cmath>
#include <fstream>
#include <limits>

#include "cloudmask/errors.hpp"
#include "cloudmask/scene.hpp"
#include "cloudmask/synth.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cloudmask;

namespace {

ValidityPlane random_plane(std::size_t w, std::size_t h, std::uint64_t seed, double p = 0.7) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  ValidityPlane v(w, h);
  for (auto& x : v.data) x = b(rng) ? 1 : 0;
  return v;
}

ValidityPlane intersect2(const ValidityPlane& a, const ValidityPlane& b) {
  const ValidityPlane ps[] = {a, b};
  return intersect_valid(ps);
}

MaskRaster random_mask(std::size_t w, std::size_t h, std::uint64_t seed, bool confidence) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(0, 2);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  MaskRaster m(w, h);
  if (confidence) m.confidence.emplace(w * h);
  for (std::size_t i = 0; i < w * h; ++i) {
    const int c = cls(rng);
    m.labels[i] = c == 0 ? MaskLabel::kClear : c == 1 ? MaskLabel::kCloudShadow : MaskLabel::kNodata;
    if (confidence) {
      (*m.confidence)[i] = m.labels[i] == MaskLabel::kNodata
                               ? std::numeric_limits<float>::quiet_NaN()
                               : u(rng);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("band names parse and format") {
  CHECK(parse_band("swir1") == BandId::kSwir1);
  CHECK(parse_band_list("red,green,blue,nir") ==
        std::vector<BandId>{BandId::kRed, BandId::kGreen, BandId::kBlue, BandId::kNir});
  CHECK(format_band_list(std::vector<BandId>{BandId::kBlue, BandId::kSwir2}) == "blue,swir2");
  CHECK_THROWS_AS(parse_band("thermal"), ConfigError);
}

TEST_CASE("PMBS roundtrip is bit-exact and preserves band order") {
  std::vector<BandId> order{BandId::kSwir2, BandId::kRed, BandId::kUltraBlue, BandId::kNir,
                            BandId::kGreen, BandId::kBlue, BandId::kSwir1};
  BandStack s = testing::random_scene(64, 64, 3, 0.05, order);
  const auto bytes = encode_bandstack(s);
  const BandStack back = decode_bandstack(bytes);
  CHECK(back.bands == order);
  CHECK(back.planes == s.planes);
  CHECK(back.nodata == s.nodata);
  CHECK(encode_bandstack(back) == bytes);

  const auto dir = testing::temp_dir("pmbs");
  write_bandstack(s, dir / "s.pmbs");
  CHECK(read_bandstack(dir / "s.pmbs") == s);
}

TEST_CASE("PMBS faults map to format errors") {
  const BandStack s = testing::random_scene(20, 17, 4);
  const auto bytes = encode_bandstack(s);
  auto cut = bytes;
  cut.pop_back();
  try {
    decode_bandstack(cut);
    FAIL("truncation not detected");
  } catch (const TruncatedError& e) {
    CHECK(e.expected() == bytes.size());
    CHECK(e.actual() == cut.size());
  }
  auto bad = bytes;
  bad[1] = 'Z';
  CHECK_THROWS_AS(decode_bandstack(bad), BadMagicError);
  bad = bytes;
  bad[4] = 7;
  CHECK_THROWS_AS(decode_bandstack(bad), VersionError);
  bad = bytes;
  bad[bytes.size() - 20] ^= 1;
  CHECK_THROWS_AS(decode_bandstack(bad), ChecksumError);
  CHECK_THROWS_AS(decode_bandstack(std::vector<std::uint8_t>{'P', 'M'}), FormatError);
  // A mask container is not a band stack.
  CHECK_THROWS_AS(decode_bandstack(encode_mask(MaskRaster(4, 4, MaskLabel::kClear))), BadMagicError);
}

TEST_CASE("PMMR roundtrip with and without confidence") {
  for (bool conf : {false, true}) {
    const MaskRaster m = random_mask(33, 21, 5, conf);
    const auto bytes = encode_mask(m);
    const MaskRaster back = decode_mask(bytes);
    CHECK(back == m);
    CHECK(encode_mask(back) == bytes);
  }
  auto bytes = encode_mask(random_mask(8, 8, 6, true));
  bytes.resize(bytes.size() - 9);
  CHECK_THROWS_AS(decode_mask(bytes), TruncatedError);
}

TEST_CASE("mask confidence must be defined exactly on labeled pixels") {
  MaskRaster m = random_mask(10, 10, 7, true);
  CHECK_NOTHROW(m.validate());
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    if (m.labels[i] == MaskLabel::kNodata) {
      (*m.confidence)[i] = 0.5f;
      break;
    }
  }
  CHECK_THROWS(m.validate());
}

TEST_CASE("scene validation enforces the reflectance range") {
  BandStack s = testing::random_scene(8, 8, 8);
  CHECK_NOTHROW(s.validate());
  s.planes[2][5] = 1.7f;
  CHECK_THROWS_AS(s.validate(), DataError);
  s.nodata[5] = 1;
  CHECK_NOTHROW(s.validate());
  s.planes[0][9] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(s.validate(), DataError);
}

TEST_CASE("intersect_valid is a pointwise AND") {
  const ValidityPlane all(30, 20, 1);
  const ValidityPlane a = random_plane(30, 20, 1);
  CHECK(intersect2(a, all) == a);
  ValidityPlane na = a;
  for (auto& x : na.data) x = !x;
  const ValidityPlane none = intersect2(a, na);
  for (auto x : none.data) CHECK(x == 0);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ValidityPlane p = random_plane(17, 23, seed * 3);
    const ValidityPlane q = random_plane(17, 23, seed * 3 + 1);
    const ValidityPlane r = random_plane(17, 23, seed * 3 + 2);
    const ValidityPlane pq = intersect2(p, q);
    for (std::size_t i = 0; i < pq.data.size(); ++i) CHECK(pq.data[i] == (p.data[i] && q.data[i]));
    CHECK(pq == intersect2(q, p));
    CHECK(intersect2(pq, r) == intersect2(p, intersect2(q, r)));
    CHECK(intersect2(p, p) == p);
  }
  CHECK_THROWS_AS(intersect2(ValidityPlane(3, 3, 1), ValidityPlane(3, 4, 1)), ContractViolation);
}

TEST_CASE("apply_validity clips bands and masks consistently") {
  BandStack s = testing::random_scene(12, 9, 9);
  MaskRaster m(12, 9, MaskLabel::kClear);
  const ValidityPlane v = random_plane(12, 9, 10);
  apply_validity(s, v);
  apply_validity(m, v);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    CHECK(s.nodata[i] == (v.data[i] ? 0 : 1));
    CHECK((m.labels[i] == MaskLabel::kNodata) == (v.data[i] == 0));
  }
}

TEST_CASE("binarize_labels merges cloud and shadow") {
  Plane<std::uint8_t> cloud(5, 5, static_cast<std::uint8_t>(RawClass::kCloud));
  CHECK(binarize_labels(cloud).count(MaskLabel::kCloudShadow) == 25);

  std::mt19937_64 rng(11);
  const std::uint8_t codes[] = {0, 1, 2, 255};
  std::uniform_int_distribution<int> pick(0, 3);
  Plane<std::uint8_t> raw(40, 30);
  std::size_t n[4] = {};
  for (auto& c : raw.data) {
    const int k = pick(rng);
    c = codes[k];
    ++n[k];
  }
  const MaskRaster m = binarize_labels(raw);
  CHECK(m.labels.size() == raw.data.size());
  CHECK(m.count(MaskLabel::kCloudShadow) == n[1] + n[2]);
  CHECK(m.count(MaskLabel::kClear) == n[0]);
  CHECK(m.count(MaskLabel::kNodata) == n[3]);
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    if (raw.data[i] == 255) CHECK(m.labels[i] == MaskLabel::kNodata);
  }
  raw.data[7] = 9;
  CHECK_THROWS_AS(binarize_labels(raw), DataError);
}

TEST_CASE("synthetic scenes are deterministic and consistent with their truth") {
  SynthSpec spec;
  spec.width = 96;
  spec.height = 80;
  spec.seed = 17;
  const SyntheticScene a = generate_synthetic(spec);
  const SyntheticScene b = generate_synthetic(spec);
  CHECK(a.scene == b.scene);
  CHECK(a.truth == b.truth);
  CHECK_NOTHROW(a.scene.validate());
  CHECK(a.truth == binarize_labels(a.raw_classes));
  for (std::size_t i = 0; i < a.raw_classes.data.size(); ++i) {
    if (a.raw_classes.data[i] == static_cast<std::uint8_t>(RawClass::kCloud)) {
      CHECK(a.truth.labels[i] == MaskLabel::kCloudShadow);
    }
  }
  spec.seed = 18;
  CHECK_FALSE(generate_synthetic(spec).scene == a.scene);
}

TEST_CASE("synthetic cloud/shadow fraction tracks the expected coverage") {
  SynthSpec spec;
  double sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    spec.seed = seed;
    const SyntheticScene s = generate_synthetic(spec);
    sum += static_cast<double>(s.truth.count(MaskLabel::kCloudShadow)) /
           static_cast<double>(s.truth.labels.size());
  }
  const double mean = sum / 20.0;
  const double expected = spec.expected_coverage();
  MESSAGE("mean coverage " << mean << ", expected " << expected);
  CHECK(std::abs(mean - expected) <= 0.2 * expected);
}

TEST_CASE("synthetic nodata border") {
  SynthSpec spec;
  spec.width = 40;
  spec.height = 40;
  spec.nodata_border = 3;
  spec.cloud_axis_min = 4;
  spec.cloud_axis_max = 8;
  const SyntheticScene s = generate_synthetic(spec);
  CHECK(s.scene.is_nodata(0, 0));
  CHECK(s.scene.is_nodata(2, 20));
  CHECK_FALSE(s.scene.is_nodata(3, 3));
  CHECK(s.truth.at(39, 39) == MaskLabel::kNodata);
  spec.width = 10;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("raw import scales integers and maps sentinels to nodata") {
  const auto dir = testing::temp_dir("import");
  const std::size_t w = 4, h = 3;
  std::vector<std::int16_t> data(2 * w * h);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::int16_t>(100 * i);
  data[5] = -9999;                 // sentinel in band 0
  data[w * h + 7] = 30000;         // 3.0 reflectance, out of range in band 1
  std::ofstream(dir / "b.raw", std::ios::binary)
      .write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 2));
  std::ofstream(dir / "b.hdr") << "# bands\nkind = bands\nwidth = 4\nheight = 3\n"
                                  "bands = red,nir\ndata_type = int16\nscale = 10000\n"
                                  "nodata_value = -9999\ndata_file = b.raw\n";
  const BandStack s = import_bands(parse_import_header(dir / "b.hdr"));
  CHECK(s.bands == std::vector<BandId>{BandId::kRed, BandId::kNir});
  CHECK(s.planes[0][3] == doctest::Approx(0.03));
  CHECK(s.planes[1][2] == doctest::Approx((100.0 * (w * h + 2)) / 10000.0));
  CHECK(s.nodata[5] == 1);
  CHECK(s.nodata[7] == 1);
  CHECK(s.nodata[0] == 0);

  std::vector<std::uint8_t> labels{0, 1, 2, 255, 0, 0, 1, 1, 2, 2, 0, 255};
  std::ofstream(dir / "l.raw", std::ios::binary)
      .write(reinterpret_cast<const char*>(labels.data()), 12);
  std::ofstream(dir / "l.hdr") << "kind = labels\nwidth = 4\nheight = 3\ndata_type = uint8\n"
                                  "data_file = l.raw\n";
  const MaskRaster m = import_labels(parse_import_header(dir / "l.hdr"));
  CHECK(m.count(MaskLabel::kCloudShadow) == 6);
  CHECK(m.count(MaskLabel::kNodata) == 2);

  std::ofstream(dir / "bad.hdr") << "kind = bands\nwidth = 4\ncolour = blue\n";
  CHECK_THROWS_AS(parse_import_header(dir / "bad.hdr"), ConfigError);
}
