#include "ernet/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ernet {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

namespace {

constexpr char kRvolMagic[4] = {'R', 'V', 'O', 'L'};
constexpr size_t kNiftiHeader = 348;

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VolumeIOError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
T load(const char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

struct Raw {
  Extents extents;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 2> range{0.0, 0.0};
  std::vector<double> values;
  bool integral = false;
};

Raw read_rvol(const std::vector<char>& bytes, const fs::path& path) {
  if (bytes.size() < 12) throw TruncatedFileError("truncated RVOL header: " + path.string());
  uint64_t length = 0;
  std::memcpy(&length, bytes.data() + 4, 8);
  if (12 + length > bytes.size()) throw TruncatedFileError("truncated RVOL header: " + path.string());
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(length));
  } catch (const nlohmann::json::exception& e) {
    throw VolumeIOError("malformed RVOL header in " + path.string() + ": " + e.what());
  }
  Raw raw;
  const auto ext = h.at("extents").get<std::vector<int64_t>>();
  if (ext.size() != 3 || ext[0] < 1 || ext[1] < 1 || ext[2] < 1) throw VolumeIOError("bad RVOL extents: " + path.string());
  raw.extents = {ext[0], ext[1], ext[2]};
  if (h.contains("spacing")) raw.spacing = h["spacing"].get<std::array<double, 3>>();
  if (h.contains("intensity_range")) raw.range = h["intensity_range"].get<std::array<double, 2>>();
  const std::string dtype = h.at("dtype").get<std::string>();
  const auto n = static_cast<size_t>(raw.extents.count());
  const size_t start = 12 + length;
  raw.values.resize(n);
  if (dtype == "f64") {
    if (start + n * 8 > bytes.size()) throw TruncatedFileError("truncated RVOL payload: " + path.string());
    std::memcpy(raw.values.data(), bytes.data() + start, n * 8);
  } else if (dtype == "i32") {
    if (start + n * 4 > bytes.size()) throw TruncatedFileError("truncated RVOL payload: " + path.string());
    std::vector<int32_t> ints(n);
    std::memcpy(ints.data(), bytes.data() + start, n * 4);
    std::copy(ints.begin(), ints.end(), raw.values.begin());
    raw.integral = true;
  } else {
    throw UnsupportedDatatypeError("unsupported RVOL dtype '" + dtype + "' in " + path.string());
  }
  return raw;
}

Raw read_nifti(const std::vector<char>& bytes, const fs::path& path) {
  if (bytes.size() < kNiftiHeader) throw TruncatedFileError("truncated NIfTI header: " + path.string());
  const char* h = bytes.data();
  bool swap = false;
  if (load<int32_t>(h, false) != 348) {
    if (load<int32_t>(h, true) != 348) throw BadMagicError("not a volume file (bad magic): " + path.string());
    swap = true;
  }
  if (std::memcmp(h + 344, "n+1\0", 4) != 0) throw BadMagicError("NIfTI magic is not single-file n+1: " + path.string());
  const int16_t ndim = load<int16_t>(h + 40, swap);
  if (ndim < 1 || ndim > 7) throw VolumeIOError("bad NIfTI dim[0] in " + path.string());
  int64_t d[3] = {1, 1, 1};
  for (int i = 0; i < std::min<int>(ndim, 3); ++i) d[i] = load<int16_t>(h + 42 + 2 * i, swap);
  for (int i = 3; i < ndim; ++i)
    if (load<int16_t>(h + 42 + 2 * i, swap) > 1) throw VolumeIOError("only 3D NIfTI volumes are supported: " + path.string());
  if (d[0] < 1 || d[1] < 1 || d[2] < 1) throw VolumeIOError("bad NIfTI extents in " + path.string());
  const int16_t datatype = load<int16_t>(h + 70, swap);
  size_t elem = 0;
  switch (datatype) {
    case 2: elem = 1; break;
    case 4: elem = 2; break;
    case 16: elem = 4; break;
    default:
      throw UnsupportedDatatypeError("unsupported NIfTI datatype " + std::to_string(datatype) + " in " + path.string());
  }
  Raw raw;
  raw.extents = {d[0], d[1], d[2]};
  for (int i = 0; i < 3; ++i) {
    const float p = load<float>(h + 80 + 4 * i, swap);
    raw.spacing[static_cast<size_t>(i)] = p > 0.0f ? p : 1.0;
  }
  const auto offset = static_cast<size_t>(std::max(352.0f, load<float>(h + 108, swap)));
  const float slope = load<float>(h + 112, swap);
  const float inter = load<float>(h + 116, swap);
  const auto n = static_cast<size_t>(raw.extents.count());
  if (offset + n * elem > bytes.size()) throw TruncatedFileError("truncated NIfTI payload: " + path.string());
  raw.values.resize(n);
  raw.integral = datatype != 16;
  const bool scaled = slope != 0.0f && !(slope == 1.0f && inter == 0.0f);
  const char* p = bytes.data() + offset;
  // NIfTI stores x fastest; our grids store z fastest.
  for (int64_t z = 0; z < d[2]; ++z)
    for (int64_t y = 0; y < d[1]; ++y)
      for (int64_t x = 0; x < d[0]; ++x) {
        const auto src = static_cast<size_t>(x + d[0] * (y + d[1] * z)) * elem;
        double v = 0.0;
        if (datatype == 2) v = static_cast<uint8_t>(p[src]);
        else if (datatype == 4) v = load<int16_t>(p + src, swap);
        else v = load<float>(p + src, swap);
        if (scaled) v = v * slope + inter;
        raw.values[static_cast<size_t>((x * d[1] + y) * d[2] + z)] = v;
      }
  if (scaled) raw.integral = false;
  return raw;
}

Raw read_raw(const fs::path& path) {
  const std::vector<char> bytes = slurp(path);
  if (bytes.size() < 4) throw TruncatedFileError("truncated volume header: " + path.string());
  if (std::memcmp(bytes.data(), kRvolMagic, 4) == 0) return read_rvol(bytes, path);
  return read_nifti(bytes, path);
}

void write_rvol_raw(const fs::path& path, const nlohmann::json& header, const char* payload, size_t size) {
  const std::string text = header.dump();
  const uint64_t length = text.size();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw VolumeIOError("cannot open for writing: " + path.string());
  out.write(kRvolMagic, 4);
  out.write(reinterpret_cast<const char*>(&length), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload, static_cast<std::streamsize>(size));
  if (!out) throw VolumeIOError("write failed: " + path.string());
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

}  // namespace

Volume read_volume(const fs::path& path) {
  Raw raw = read_raw(path);
  Volume v(raw.extents);
  v.values = std::move(raw.values);
  v.spacing = raw.spacing;
  v.intensity_range = raw.range;
  return v;
}

LabelVolume read_labels(const fs::path& path) {
  const Raw raw = read_raw(path);
  LabelVolume v(raw.extents);
  v.spacing = raw.spacing;
  for (size_t i = 0; i < raw.values.size(); ++i) {
    const double x = raw.values[i];
    if (x < 0.0 || x != std::floor(x)) throw VolumeIOError("label volume holds a non-integer value: " + path.string());
    v.labels[i] = static_cast<int32_t>(x);
  }
  return v;
}

void write_rvol(const fs::path& path, const Volume& v) {
  nlohmann::json h = {{"extents", {v.extents.x, v.extents.y, v.extents.z}},
                      {"dtype", "f64"},
                      {"spacing", v.spacing},
                      {"intensity_range", v.intensity_range}};
  write_rvol_raw(path, h, reinterpret_cast<const char*>(v.values.data()), v.values.size() * 8);
}

void write_rvol(const fs::path& path, const LabelVolume& v) {
  nlohmann::json h = {{"extents", {v.extents.x, v.extents.y, v.extents.z}}, {"dtype", "i32"}, {"spacing", v.spacing}};
  write_rvol_raw(path, h, reinterpret_cast<const char*>(v.labels.data()), v.labels.size() * 4);
}

void write_nifti(const fs::path& path, const Volume& v, NiftiType type) {
  std::vector<char> header(352, 0);
  auto put = [&](size_t off, auto value) { std::memcpy(header.data() + off, &value, sizeof(value)); };
  put(0, int32_t{348});
  put(40, int16_t{3});
  put(42, static_cast<int16_t>(v.extents.x));
  put(44, static_cast<int16_t>(v.extents.y));
  put(46, static_cast<int16_t>(v.extents.z));
  for (int i = 3; i < 7; ++i) put(42 + 2 * static_cast<size_t>(i), int16_t{1});
  const auto code = static_cast<int16_t>(type);
  const int16_t bitpix = type == NiftiType::UInt8 ? 8 : (type == NiftiType::Int16 ? 16 : 32);
  put(70, code);
  put(72, bitpix);
  put(76, 1.0f);
  for (int i = 0; i < 3; ++i) put(80 + 4 * static_cast<size_t>(i), static_cast<float>(v.spacing[static_cast<size_t>(i)]));
  put(108, 352.0f);
  put(112, 1.0f);
  put(116, 0.0f);
  std::memcpy(header.data() + 344, "n+1\0", 4);

  const Extents e = v.extents;
  const size_t elem = static_cast<size_t>(bitpix / 8);
  std::vector<char> payload(static_cast<size_t>(e.count()) * elem);
  for (int64_t z = 0; z < e.z; ++z)
    for (int64_t y = 0; y < e.y; ++y)
      for (int64_t x = 0; x < e.x; ++x) {
        const double val = v.at(x, y, z);
        char* dst = payload.data() + static_cast<size_t>(x + e.x * (y + e.y * z)) * elem;
        if (type == NiftiType::UInt8) {
          const auto q = static_cast<uint8_t>(std::clamp(std::lround(val), 0L, 255L));
          std::memcpy(dst, &q, 1);
        } else if (type == NiftiType::Int16) {
          const auto q = static_cast<int16_t>(std::clamp(std::lround(val), -32768L, 32767L));
          std::memcpy(dst, &q, 2);
        } else {
          const auto q = static_cast<float>(val);
          std::memcpy(dst, &q, 4);
        }
      }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw VolumeIOError("cannot open for writing: " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw VolumeIOError("write failed: " + path.string());
}

void write_volume(const fs::path& path, const Volume& v) {
  if (path.extension() == ".nii") {
    write_nifti(path, v);
  } else {
    write_rvol(path, v);
  }
}

Volume normalize_minmax(const Volume& v) {
  Volume out = v;
  if (v.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.values.begin(), v.values.end());
  const double mn = *lo, mx = *hi;
  out.intensity_range = {mn, mx};
  if (mx == mn) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  for (double& x : out.values) x = (x - mn) / (mx - mn);
  return out;
}

void write_transform_file(const fs::path& path, const AffineTransform& t, const CoordinateFrame& frame,
                          TransformConvention convention) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw VolumeIOError("cannot open for writing: " + path.string());
  write_transform(out, t, frame, convention);
}

AffineTransform read_transform_file(const fs::path& path, const CoordinateFrame& frame) {
  std::ifstream in(path);
  if (!in) throw VolumeIOError("cannot open " + path.string());
  return read_transform(in, frame);
}

std::vector<PairPaths> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw VolumeIOError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw VolumeIOError("malformed manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  std::optional<std::string> shared_target;
  nlohmann::json entries = j;
  if (j.is_object()) {
    if (j.contains("target")) shared_target = j["target"].get<std::string>();
    entries = j.at("pairs");
  }
  if (!entries.is_array()) throw VolumeIOError("manifest must be a list of pairs: " + path.string());
  std::vector<PairPaths> pairs;
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    PairPaths p;
    if (!e.contains("source")) throw VolumeIOError("manifest entry " + std::to_string(i) + " lacks key 'source'");
    p.source = resolve(base, e["source"].get<std::string>());
    if (e.contains("target")) {
      p.target = resolve(base, e["target"].get<std::string>());
    } else if (shared_target) {
      p.target = resolve(base, *shared_target);
    } else {
      throw VolumeIOError("manifest entry " + std::to_string(i) + " lacks key 'target'");
    }
    p.name = e.value("name", p.source.stem().string());
    if (e.contains("mask")) p.mask = resolve(base, e["mask"].get<std::string>());
    if (e.contains("labels")) p.labels = resolve(base, e["labels"].get<std::string>());
    if (e.contains("target_labels")) p.target_labels = resolve(base, e["target_labels"].get<std::string>());
    if (e.contains("transform")) p.transform = resolve(base, e["transform"].get<std::string>());
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_manifest(const fs::path& path, const std::vector<PairPaths>& pairs) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) { return fs::relative(p, base.empty() ? fs::path(".") : base).generic_string(); };
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : pairs) {
    nlohmann::json e = {{"name", p.name}, {"source", rel(p.source)}, {"target", rel(p.target)}};
    if (p.mask) e["mask"] = rel(*p.mask);
    if (p.labels) e["labels"] = rel(*p.labels);
    if (p.target_labels) e["target_labels"] = rel(*p.target_labels);
    if (p.transform) e["transform"] = rel(*p.transform);
    j.push_back(std::move(e));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw VolumeIOError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

PairData load_pair(const PairPaths& paths) {
  PairData d;
  d.name = paths.name;
  d.source = read_volume(paths.source);
  d.target = read_volume(paths.target);
  if (d.source.extents != d.target.extents) throw VolumeIOError("source and target extents differ for " + paths.name);
  if (paths.mask) d.mask = read_volume(*paths.mask);
  if (paths.labels) d.labels = read_labels(*paths.labels);
  if (paths.target_labels) d.target_labels = read_labels(*paths.target_labels);
  if (paths.transform) d.transform = read_transform_file(*paths.transform, CoordinateFrame{d.source.extents});
  return d;
}

std::vector<PairData> load_dataset(const fs::path& manifest) {
  std::vector<PairData> out;
  for (const auto& p : read_manifest(manifest)) out.push_back(load_pair(p));
  return out;
}

}  // namespace ernet
