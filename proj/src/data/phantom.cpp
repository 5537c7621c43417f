#include "ernet/phantom.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace ernet {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u = 0.0;
  do {
    u = uniform();
  } while (u <= 0.0);
  const double v = uniform();
  const double r = std::sqrt(-2.0 * std::log(u));
  spare_ = r * std::sin(2.0 * std::numbers::pi * v);
  has_spare_ = true;
  return r * std::cos(2.0 * std::numbers::pi * v);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << has_spare_ << ' ' << std::hexfloat << spare_;
  return os.str();
}

void Rng::set_state(const std::string& text) {
  std::istringstream is(text);
  is >> engine_ >> has_spare_;
  std::string spare;
  is >> spare;
  if (!is) throw std::invalid_argument("Rng::set_state: malformed state");
  spare_ = std::strtod(spare.c_str(), nullptr);
}

uint64_t Rng::index(uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
}

AffineTransform random_affine(const AugmentationRanges& ranges, Rng& rng, const CoordinateFrame& frame) {
  Vec3 t{};
  for (int axis = 0; axis < 3; ++axis) {
    t[static_cast<size_t>(axis)] =
        rng.uniform(-ranges.translation, ranges.translation) / frame.voxels_per_unit(axis);
  }
  Vec3 ang{};
  for (double& a : ang) a = rng.uniform(-ranges.rotation, ranges.rotation) * std::numbers::pi / 180.0;
  const double s = rng.uniform(ranges.scale_lo, ranges.scale_hi);

  const double cx = std::cos(ang[0]), sx = std::sin(ang[0]);
  const double cy = std::cos(ang[1]), sy = std::sin(ang[1]);
  const double cz = std::cos(ang[2]), sz = std::sin(ang[2]);
  Mat4 rx = mat4_identity(), ry = mat4_identity(), rz = mat4_identity();
  rx[1][1] = cx; rx[1][2] = -sx; rx[2][1] = sx; rx[2][2] = cx;
  ry[0][0] = cy; ry[0][2] = sy; ry[2][0] = -sy; ry[2][2] = cy;
  rz[0][0] = cz; rz[0][1] = -sz; rz[1][0] = sz; rz[1][1] = cz;
  Mat4 m = mat4_multiply(rz, mat4_multiply(ry, rx));
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m[r][c] *= s;
    m[r][3] = t[static_cast<size_t>(r)];
  }
  return AffineTransform::from_matrix(m);
}

namespace {

struct Ellipsoid {
  Vec3 center;
  Vec3 radii;
  double intensity;
  int32_t label;

  double distance(const Vec3& p) const {
    double acc = 0.0;
    for (size_t i = 0; i < 3; ++i) {
      const double q = (p[i] - center[i]) / radii[i];
      acc += q * q;
    }
    return std::sqrt(acc);
  }
  double mean_radius() const { return (radii[0] + radii[1] + radii[2]) / 3.0; }
};

// Geometry at 32^3 in voxels relative to the volume centre.
constexpr double kBrainIntensity = 0.4;
constexpr double kEdgeWidth = 0.35;

struct HeadModel {
  Ellipsoid brain;
  std::array<Ellipsoid, 2> structures;
  double scale;

  explicit HeadModel(double f)
      : brain{{0, 0, 0}, {12.0 * f, 12.5 * f, 10.0 * f}, kBrainIntensity, 0},
        structures{Ellipsoid{{-5.5 * f, 1.5 * f, 0.5 * f}, {5.0 * f, 7.0 * f, 6.0 * f}, 0.85, 1},
                   Ellipsoid{{5.5 * f, -1.5 * f, -0.5 * f}, {5.0 * f, 7.0 * f, 6.0 * f}, 0.65, 2}},
        scale(f) {}

  static double soft(double dist, double radius) { return 1.0 / (1.0 + std::exp((dist - 1.0) * radius / kEdgeWidth)); }

  double brain_intensity(const Vec3& p) const {
    double v = brain.intensity * soft(brain.distance(p), brain.mean_radius());
    for (const auto& s : structures) v += (s.intensity - brain.intensity) * soft(s.distance(p), s.mean_radius());
    return v * (1.0 + 0.08 * std::sin(p[0] / (3.0 * scale)) * std::cos(p[1] / (4.0 * scale)));
  }

  double skull(const Vec3& p, double gap, double thickness, double intensity) const {
    const double dd = (brain.distance(p) - 1.0) * brain.mean_radius();
    const double inner = 1.0 / (1.0 + std::exp(-(dd - gap) / kEdgeWidth));
    const double outer = 1.0 / (1.0 + std::exp((dd - gap - thickness) / kEdgeWidth));
    return intensity * inner * outer;
  }

  bool in_brain(const Vec3& p) const { return brain.distance(p) <= 1.0; }

  int32_t label(const Vec3& p) const {
    int32_t l = 0;
    for (const auto& s : structures)
      if (s.distance(p) <= 1.0) l = s.label;
    return l;
  }
};

Vec3 apply(const Mat4& m, const Vec3& p) {
  Vec3 q{};
  for (size_t r = 0; r < 3; ++r) q[r] = m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
  return q;
}

bool round_inside(const Vec3& q, const Extents& e, std::array<int64_t, 3>& idx) {
  const int64_t n[3] = {e.x, e.y, e.z};
  for (size_t i = 0; i < 3; ++i) {
    idx[i] = static_cast<int64_t>(std::floor(q[i] + 0.5));
    if (idx[i] < 0 || idx[i] >= n[i]) return false;
  }
  return true;
}

// Source-space labels consistent with nearest-neighbour warping: every source voxel hit by
// the rounded forward map of a target voxel takes that voxel's label (closest hit wins);
// the rest fall back to the nearest target voxel under the inverse map.
LabelVolume splat_labels(const LabelVolume& target_labels, const Mat4& to_source) {
  const Extents e = target_labels.extents;
  const Mat4 to_target = mat4_inverse(to_source);
  LabelVolume out(e);
  std::array<int64_t, 3> idx{};
  for (int64_t x = 0; x < e.x; ++x)
    for (int64_t y = 0; y < e.y; ++y)
      for (int64_t z = 0; z < e.z; ++z) {
        const Vec3 q = apply(to_target, {double(x), double(y), double(z)});
        if (round_inside(q, e, idx)) out.at(x, y, z) = target_labels.at(idx[0], idx[1], idx[2]);
      }
  std::vector<double> best(target_labels.labels.size(), std::numeric_limits<double>::infinity());
  for (int64_t x = 0; x < e.x; ++x)
    for (int64_t y = 0; y < e.y; ++y)
      for (int64_t z = 0; z < e.z; ++z) {
        const Vec3 q = apply(to_source, {double(x), double(y), double(z)});
        if (!round_inside(q, e, idx)) continue;
        double d = 0.0;
        for (size_t i = 0; i < 3; ++i) d += (q[i] - double(idx[i])) * (q[i] - double(idx[i]));
        const auto v = static_cast<size_t>(out.index(idx[0], idx[1], idx[2]));
        if (d < best[v]) {
          best[v] = d;
          out.labels[v] = target_labels.at(x, y, z);
        }
      }
  return out;
}

}  // namespace

PhantomSample make_phantom(uint64_t seed, const Extents& extents, const AugmentationRanges& ranges) {
  if (extents.x < 32 || extents.y < 32 || extents.z < 32) {
    throw std::invalid_argument("make_phantom: every extent must be at least 32");
  }
  Rng rng(seed);
  const CoordinateFrame frame{extents};
  const AffineTransform truth = random_affine(ranges, rng, frame);
  const double gap_base = rng.uniform(1.2, 2.0);
  const double thickness_base = rng.uniform(2.0, 3.0);
  const double skull_intensity = rng.uniform(0.9, 1.0);

  const double f = static_cast<double>(std::min({extents.x, extents.y, extents.z}) - 1) / 31.0;
  const HeadModel head(f);
  const double gap = gap_base * f;
  const double thickness = thickness_base * f;
  const Vec3 centre{(extents.x - 1) / 2.0, (extents.y - 1) / 2.0, (extents.z - 1) / 2.0};
  // Voxel-space maps: target voxel -> source voxel, and its inverse.
  const Mat4 to_source = to_voxel_matrix(truth, frame);
  const Mat4 to_target = mat4_inverse(to_source);

  PhantomSample p;
  p.truth_transform = truth;
  p.source = Volume(extents);
  p.target = Volume(extents);
  p.truth_mask = Volume(extents);
  p.target_mask = Volume(extents);
  p.target_labels = LabelVolume(extents);
  for (int64_t x = 0; x < extents.x; ++x)
    for (int64_t y = 0; y < extents.y; ++y)
      for (int64_t z = 0; z < extents.z; ++z) {
        const Vec3 pt{x - centre[0], y - centre[1], z - centre[2]};
        p.target.at(x, y, z) = head.brain_intensity(pt);
        p.target_mask.at(x, y, z) = head.in_brain(pt) ? 1.0 : 0.0;
        p.target_labels.at(x, y, z) = head.label(pt);

        const Vec3 s = apply(to_target, {double(x), double(y), double(z)});
        const Vec3 ps{s[0] - centre[0], s[1] - centre[1], s[2] - centre[2]};
        p.source.at(x, y, z) = head.brain_intensity(ps) + head.skull(ps, gap, thickness, skull_intensity);
        p.truth_mask.at(x, y, z) = head.in_brain(ps) ? 1.0 : 0.0;
      }
  for (double& v : p.source.values) v += 0.02 * rng.normal();
  p.source = normalize_minmax(p.source);
  p.truth_labels = splat_labels(p.target_labels, to_source);
  return p;
}

PairData to_pair(const PhantomSample& p, const std::string& name) {
  PairData d;
  d.name = name;
  d.source = p.source;
  d.target = p.target;
  d.mask = p.truth_mask;
  d.labels = p.truth_labels;
  d.target_labels = p.target_labels;
  d.transform = p.truth_transform;
  return d;
}

Volume warp_mask(const Volume& mask, const AffineTransform& t) {
  return labels_to_mask(warp_labels(mask_to_labels(mask), t, CoordinateFrame{mask.extents}));
}

PairData augment(const PairData& pair, const AffineTransform& a) {
  const CoordinateFrame frame{pair.source.extents};
  PairData out = pair;
  out.source = warp(pair.source, a);
  if (pair.mask) out.mask = warp_mask(*pair.mask, a);
  if (pair.labels) out.labels = warp_labels(*pair.labels, a, frame);
  if (pair.transform) out.transform = compose(*pair.transform, a.inverse());
  return out;
}

}  // namespace ernet
