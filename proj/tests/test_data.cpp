#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "ernet/io.hpp"
#include "ernet/objective.hpp"
#include "ernet/phantom.hpp"

using namespace ernet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ernet_test_data";
  fs::create_directories(dir);
  return dir / name;
}

template <typename T>
void put(std::vector<char>& buf, size_t off, T v, bool big_endian = false) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if (big_endian) std::reverse(b, b + sizeof(T));
  std::memcpy(buf.data() + off, b, sizeof(T));
}

// Minimal single-file NIfTI-1 image, x fastest in the payload.
std::vector<char> nifti_bytes(int16_t datatype, int16_t bitpix, const std::array<int16_t, 3>& dims,
                              const std::vector<char>& payload, bool big_endian = false, float slope = 0.0f,
                              float inter = 0.0f) {
  std::vector<char> buf(352, 0);
  put(buf, 0, int32_t{348}, big_endian);
  put(buf, 40, int16_t{3}, big_endian);
  for (int i = 0; i < 3; ++i) put(buf, 42 + 2 * size_t(i), dims[size_t(i)], big_endian);
  put(buf, 70, datatype, big_endian);
  put(buf, 72, bitpix, big_endian);
  for (int i = 0; i < 3; ++i) put(buf, 80 + 4 * size_t(i), 1.5f, big_endian);
  put(buf, 108, 352.0f, big_endian);
  put(buf, 112, slope, big_endian);
  put(buf, 116, inter, big_endian);
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  buf.insert(buf.end(), payload.begin(), payload.end());
  return buf;
}

void dump(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
}

double golden(int64_t x, int64_t y, int64_t z) { return double(x) + 10.0 * double(y) + 100.0 * double(z) + 0.25; }

}  // namespace

TEST_CASE("rvol round-trips bit-exactly") {
  Volume v({3, 4, 5});
  for (size_t i = 0; i < v.values.size(); ++i) v.values[i] = std::sin(double(i)) * 1e3 + 1e-300;
  v.values[7] = -0.0;
  v.spacing = {0.5, 1.25, 3.0};
  v.intensity_range = {-2.0, 7.5};
  write_rvol(scratch("a.rvol"), v);
  const Volume back = read_volume(scratch("a.rvol"));
  CHECK(back.extents == v.extents);
  CHECK(std::memcmp(back.values.data(), v.values.data(), v.values.size() * sizeof(double)) == 0);
  CHECK(back.spacing == v.spacing);
  CHECK(back.intensity_range == v.intensity_range);

  LabelVolume l({2, 3, 4});
  for (size_t i = 0; i < l.labels.size(); ++i) l.labels[i] = int32_t(i % 5);
  write_rvol(scratch("l.rvol"), l);
  CHECK(read_labels(scratch("l.rvol")).labels == l.labels);
}

TEST_CASE("hand-built float32 NIfTI reads back exactly") {
  std::vector<char> payload;
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        const float f = float(golden(x, y, z));
        const char* b = reinterpret_cast<const char*>(&f);
        payload.insert(payload.end(), b, b + 4);
      }
  dump(scratch("g.nii"), nifti_bytes(16, 32, {3, 3, 3}, payload));
  const Volume v = read_volume(scratch("g.nii"));
  CHECK(v.extents == Extents{3, 3, 3});
  CHECK(v.spacing == std::array<double, 3>{1.5, 1.5, 1.5});
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 3; ++y)
      for (int z = 0; z < 3; ++z) CHECK(v.at(x, y, z) == golden(x, y, z));
}

TEST_CASE("big-endian int16 and scaled uint8 NIfTI") {
  std::vector<char> payload;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 4; ++x) {
        int16_t s = int16_t(x - 10 * y + 100 * z);
        char b[2];
        std::memcpy(b, &s, 2);
        std::swap(b[0], b[1]);
        payload.insert(payload.end(), b, b + 2);
      }
  dump(scratch("be.nii"), nifti_bytes(4, 16, {4, 3, 2}, payload, true));
  const Volume be = read_volume(scratch("be.nii"));
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 3; ++y)
      for (int z = 0; z < 2; ++z) CHECK(be.at(x, y, z) == double(x - 10 * y + 100 * z));

  std::vector<char> bytes;
  for (int i = 0; i < 8; ++i) bytes.push_back(char(uint8_t(200 + i)));
  dump(scratch("u8.nii"), nifti_bytes(2, 8, {2, 2, 2}, bytes, false, 0.5f, -1.0f));
  const Volume u8 = read_volume(scratch("u8.nii"));
  CHECK(u8.at(1, 1, 1) == doctest::Approx(0.5 * 207 - 1.0));
  CHECK(u8.at(0, 0, 0) == doctest::Approx(0.5 * 200 - 1.0));
}

TEST_CASE("distinct errors for truncation, magic and datatype") {
  const std::vector<char> good = nifti_bytes(16, 32, {2, 2, 2}, std::vector<char>(32, 0));
  dump(scratch("short.nii"), std::vector<char>(good.begin(), good.begin() + 100));
  CHECK_THROWS_AS(read_volume(scratch("short.nii")), TruncatedFileError);
  dump(scratch("nopay.nii"), std::vector<char>(good.begin(), good.begin() + 360));
  CHECK_THROWS_AS(read_volume(scratch("nopay.nii")), TruncatedFileError);

  std::vector<char> bad = good;
  bad[0] = 'X';
  dump(scratch("magic.nii"), bad);
  CHECK_THROWS_AS(read_volume(scratch("magic.nii")), BadMagicError);

  dump(scratch("f64.nii"), nifti_bytes(64, 64, {2, 2, 2}, std::vector<char>(64, 0)));
  CHECK_THROWS_AS(read_volume(scratch("f64.nii")), UnsupportedDatatypeError);
  CHECK_THROWS_AS(read_volume(scratch("does_not_exist.rvol")), VolumeIOError);
}

TEST_CASE("NIfTI writer round-trips to float32 precision") {
  Volume v({5, 3, 4});
  for (size_t i = 0; i < v.values.size(); ++i) v.values[i] = std::cos(double(i)) / 3.0;
  write_volume(scratch("w.nii"), v);
  const Volume back = read_volume(scratch("w.nii"));
  for (size_t i = 0; i < v.values.size(); ++i) CHECK(back.values[i] == double(float(v.values[i])));

  Volume ints({2, 2, 2});
  for (size_t i = 0; i < 8; ++i) ints.values[i] = double(i * 30);
  write_nifti(scratch("i16.nii"), ints, NiftiType::Int16);
  write_nifti(scratch("u8w.nii"), ints, NiftiType::UInt8);
  CHECK(read_volume(scratch("i16.nii")).values == ints.values);
  CHECK(read_volume(scratch("u8w.nii")).values == ints.values);
}

TEST_CASE("min-max normalization") {
  Volume c({2, 2, 2}, 4.0);
  const Volume cn = normalize_minmax(c);
  for (double x : cn.values) CHECK(x == 0.0);
  Volume v({3, 1, 1});
  v.values = {0, 5, 10};
  const Volume n = normalize_minmax(v);
  CHECK(n.values == std::vector<double>{0, 0.5, 1});
  CHECK(n.intensity_range == std::array<double, 2>{0, 10});
  CHECK(normalize_minmax(n).values == n.values);
}

TEST_CASE("random affine ranges") {
  const CoordinateFrame frame{{32, 32, 32}};
  Rng rng(1);
  CHECK(random_affine(AugmentationRanges{}, rng, frame) == AffineTransform::identity());
  const AugmentationRanges r = AugmentationRanges::lpba40();
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const AffineTransform a = random_affine(r, rng, frame);
    const Vec3 t = a.translation_part();
    for (int axis = 0; axis < 3; ++axis) worst = std::max(worst, std::abs(t[size_t(axis)]) * frame.voxels_per_unit(axis));
    // Isotropic scale times a rotation: every column has the sampled scale as its norm.
    const Mat4 m = a.matrix();
    const double s = std::sqrt(m[0][0] * m[0][0] + m[1][0] * m[1][0] + m[2][0] * m[2][0]);
    CHECK(s >= 0.98 - 1e-12);
    CHECK(s <= 1.02 + 1e-12);
  }
  CHECK(worst <= 5.0);
  CHECK(worst > 4.0);
  Rng a(9), b(9);
  CHECK(random_affine(r, a, frame) == random_affine(r, b, frame));
}

TEST_CASE("rng state snapshots resume the sequence") {
  Rng a(5);
  a.normal();
  const std::string s = a.state();
  const double next = a.normal();
  Rng b(0);
  b.set_state(s);
  CHECK(b.normal() == next);
}

TEST_CASE("phantoms are deterministic and self-consistent") {
  const PhantomSample p = make_phantom(3, {32, 32, 32}, AugmentationRanges::lpba40());
  const PhantomSample q = make_phantom(3, {32, 32, 32}, AugmentationRanges::lpba40());
  CHECK(p.source.values == q.source.values);
  CHECK(p.truth_labels.labels == q.truth_labels.labels);
  CHECK(p.truth_transform == q.truth_transform);
  CHECK(dice_ext(p.truth_mask, p.truth_mask) == 1.0);
  CHECK(*std::min_element(p.source.values.begin(), p.source.values.end()) == 0.0);
  CHECK(*std::max_element(p.source.values.begin(), p.source.values.end()) == 1.0);
  CHECK_THROWS_AS(make_phantom(3, {16, 32, 32}, AugmentationRanges{}), std::invalid_argument);

  const CoordinateFrame frame{{32, 32, 32}};
  double worst = 1.0;
  for (uint64_t seed = 100; seed < 200; ++seed) {
    const PhantomSample s = make_phantom(seed, {32, 32, 32}, AugmentationRanges::lpba40());
    CHECK(count_components(s.truth_mask) == 1);
    const DiceRegResult d = dice_reg(s.truth_labels, s.target_labels, s.truth_transform, frame);
    CHECK(d.per_label.size() >= 2);
    worst = std::min(worst, d.mean);
  }
  CHECK(worst >= 0.99);
}

TEST_CASE("phantom at a non-cubic size") {
  const PhantomSample p = make_phantom(4, {36, 32, 40}, AugmentationRanges::lpba40());
  CHECK(p.source.extents == Extents{36, 32, 40});
  CHECK(count_components(p.truth_mask) == 1);
  CHECK(dice_reg(p.truth_labels, p.target_labels, p.truth_transform, CoordinateFrame{p.source.extents}).mean >= 0.99);
}

TEST_CASE("augmentation moves labels with the source") {
  const CoordinateFrame frame{{32, 32, 32}};
  Rng rng(11);
  for (uint64_t seed : {5, 6, 7}) {
    const PairData pair = to_pair(make_phantom(seed, {32, 32, 32}, AugmentationRanges::lpba40()), "p");
    const AffineTransform a = random_affine(AugmentationRanges::lpba40(), rng, frame);
    const PairData aug = augment(pair, a);
    REQUIRE(aug.mask.has_value());
    REQUIRE(aug.transform.has_value());
    const Volume back = warp_mask(*aug.mask, a.inverse());
    CHECK(dice_ext(back, *pair.mask) >= 0.95);
    // The updated truth transform still carries the augmented source onto the target.
    const DiceRegResult d = dice_reg(*aug.labels, *aug.target_labels, *aug.transform, frame);
    CHECK(d.mean >= 0.85);
  }
}

TEST_CASE("manifests in list and atlas form") {
  const fs::path dir = scratch("manifest_dir");
  fs::create_directories(dir);
  Volume v({2, 2, 2}, 0.5);
  write_rvol(dir / "s.rvol", v);
  write_rvol(dir / "t.rvol", v);
  std::ofstream(dir / "list.json") << R"([{"source": "s.rvol", "target": "t.rvol"}])";
  const auto list = read_manifest(dir / "list.json");
  REQUIRE(list.size() == 1);
  CHECK(list[0].source == dir / "s.rvol");
  CHECK(!list[0].mask.has_value());

  std::ofstream(dir / "atlas.json") << R"({"target": "t.rvol", "pairs": [{"source": "s.rvol"}, {"source": "s.rvol"}]})";
  const auto atlas = read_manifest(dir / "atlas.json");
  REQUIRE(atlas.size() == 2);
  CHECK(atlas[1].target == dir / "t.rvol");

  write_manifest(dir / "again.json", list);
  const auto again = read_manifest(dir / "again.json");
  REQUIRE(again.size() == 1);
  CHECK(fs::equivalent(again[0].source, list[0].source));
  CHECK(load_dataset(dir / "list.json").size() == 1);
  std::ofstream(dir / "broken.json") << "{\"pairs\": 3}";
  CHECK_THROWS(read_manifest(dir / "broken.json"));
}
