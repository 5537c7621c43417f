#include "ernet/geometry.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace ernet {

Mat4 mat4_identity() {
  Mat4 m{};
  for (int i = 0; i < 4; ++i) m[i][i] = 1.0;
  return m;
}

Mat4 mat4_multiply(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += a[i][k] * b[k][j];
      c[i][j] = acc;
    }
  return c;
}

Mat4 mat4_inverse(const Mat4& m) {
  Mat4 a = m;
  Mat4 inv = mat4_identity();
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-300) throw std::invalid_argument("mat4_inverse: singular matrix");
    std::swap(a[col], a[pivot]);
    std::swap(inv[col], inv[pivot]);
    const double p = a[col][col];
    for (int j = 0; j < 4; ++j) {
      a[col][j] /= p;
      inv[col][j] /= p;
    }
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (int j = 0; j < 4; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

AffineTransform::AffineTransform() : a_{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0} {}

AffineTransform AffineTransform::translation(const Vec3& t) {
  return AffineTransform({1, 0, 0, t[0], 0, 1, 0, t[1], 0, 0, 1, t[2]});
}

AffineTransform AffineTransform::from_matrix(const Mat4& m) {
  if (m[3][0] != 0.0 || m[3][1] != 0.0 || m[3][2] != 0.0 || m[3][3] != 1.0) {
    throw std::invalid_argument("affine matrix last row must be (0,0,0,1)");
  }
  std::array<double, 12> a{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) a[static_cast<size_t>(r * 4 + c)] = m[r][c];
  return AffineTransform(a);
}

Mat4 AffineTransform::matrix() const {
  Mat4 m{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m[r][c] = a_[static_cast<size_t>(r * 4 + c)];
  m[3] = {0.0, 0.0, 0.0, 1.0};
  return m;
}

Vec3 AffineTransform::map_point(const Vec3& p) const {
  Vec3 q{};
  for (int r = 0; r < 3; ++r) {
    const auto o = static_cast<size_t>(r * 4);
    q[static_cast<size_t>(r)] = a_[o] * p[0] + a_[o + 1] * p[1] + a_[o + 2] * p[2] + a_[o + 3];
  }
  return q;
}

AffineTransform AffineTransform::inverse() const {
  Mat4 inv = mat4_inverse(matrix());
  inv[3] = {0.0, 0.0, 0.0, 1.0};
  return from_matrix(inv);
}

AffineTransform compose(const AffineTransform& inner, const AffineTransform& outer) {
  Mat4 m = mat4_multiply(outer.matrix(), inner.matrix());
  m[3] = {0.0, 0.0, 0.0, 1.0};
  return AffineTransform::from_matrix(m);
}

double CoordinateFrame::voxels_per_unit(int axis) const {
  const int64_t n = axis == 0 ? extents.x : (axis == 1 ? extents.y : extents.z);
  return n > 1 ? static_cast<double>(n - 1) / 2.0 : 1.0;
}

Mat4 CoordinateFrame::normalization() const {
  Mat4 n = mat4_identity();
  for (int axis = 0; axis < 3; ++axis) {
    const int64_t e = axis == 0 ? extents.x : (axis == 1 ? extents.y : extents.z);
    if (e > 1) {
      n[axis][axis] = 2.0 / static_cast<double>(e - 1);
      n[axis][3] = -1.0;
    }
  }
  return n;
}

Mat4 CoordinateFrame::denormalization() const {
  Mat4 n = mat4_identity();
  for (int axis = 0; axis < 3; ++axis) {
    const int64_t e = axis == 0 ? extents.x : (axis == 1 ? extents.y : extents.z);
    if (e > 1) {
      n[axis][axis] = static_cast<double>(e - 1) / 2.0;
      n[axis][3] = static_cast<double>(e - 1) / 2.0;
    }
  }
  return n;
}

Mat4 to_voxel_matrix(const AffineTransform& t, const CoordinateFrame& frame) {
  Mat4 m = mat4_multiply(frame.denormalization(), mat4_multiply(t.matrix(), frame.normalization()));
  m[3] = {0.0, 0.0, 0.0, 1.0};
  return m;
}

AffineTransform from_voxel_matrix(const Mat4& m, const CoordinateFrame& frame) {
  Mat4 a = mat4_multiply(frame.normalization(), mat4_multiply(m, frame.denormalization()));
  a[3] = {0.0, 0.0, 0.0, 1.0};
  return AffineTransform::from_matrix(a);
}

double translation_error_voxels(const AffineTransform& a, const AffineTransform& b, const CoordinateFrame& frame) {
  const Vec3 ta = a.translation_part();
  const Vec3 tb = b.translation_part();
  double acc = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    const double d = (ta[static_cast<size_t>(axis)] - tb[static_cast<size_t>(axis)]) * frame.voxels_per_unit(axis);
    acc += d * d;
  }
  return std::sqrt(acc);
}

Tensor to_tensor(const AffineTransform& t, bool requires_grad) {
  return Tensor::from_values({12}, std::vector<double>(t.params().begin(), t.params().end()), requires_grad);
}

AffineTransform to_affine(const Tensor& t) {
  if (t.numel() != 12) throw ShapeError("to_affine: expected 12 values, got " + shape_to_string(t.shape()));
  std::array<double, 12> a{};
  std::copy(t.values().begin(), t.values().end(), a.begin());
  return AffineTransform(a);
}

Tensor compose(const Tensor& inner, const Tensor& outer) {
  if (inner.numel() != 12 || outer.numel() != 12) {
    throw ShapeError("compose: expected [12] operands, got " + shape_to_string(inner.shape()) + " and " +
                     shape_to_string(outer.shape()));
  }
  const AffineTransform result = compose(to_affine(inner), to_affine(outer));
  Tensor out = to_tensor(result);
  if (!should_record({&inner, &outer})) return out;
  out.set_requires_grad(true);
  Tape::active()->record([out, inner, outer]() mutable {
    if (!out.has_grad()) return;
    // C = O * I with implicit last rows (0,0,0,1).
    const Mat4 o = to_affine(outer).matrix();
    const Mat4 in = to_affine(inner).matrix();
    const auto g = out.grad();
    Mat4 gc{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) gc[r][c] = g[static_cast<size_t>(r * 4 + c)];
    if (outer.requires_grad()) {
      auto go = outer.grad_buffer();
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 4; ++k) {
          double acc = 0.0;
          for (int c = 0; c < 4; ++c) acc += gc[r][c] * in[k][c];
          go[static_cast<size_t>(r * 4 + k)] += acc;
        }
    }
    if (inner.requires_grad()) {
      auto gi = inner.grad_buffer();
      for (int k = 0; k < 3; ++k)
        for (int c = 0; c < 4; ++c) {
          double acc = 0.0;
          for (int r = 0; r < 3; ++r) acc += o[r][k] * gc[r][c];
          gi[static_cast<size_t>(k * 4 + c)] += acc;
        }
    }
  });
  return out;
}

Tensor warp(const Tensor& source, const Tensor& transform, const CoordinateFrame& frame) {
  if (source.rank() != 4 || source.dim(0) != 1) {
    throw ShapeError("warp: source must be single-channel [1,W,H,D], got " + shape_to_string(source.shape()));
  }
  const kernels::Dims3 dims{source.dim(1), source.dim(2), source.dim(3)};
  if (dims != frame.extents) throw ShapeError("warp: source extents do not match the coordinate frame");
  if (transform.numel() != 12) throw ShapeError("warp: transform must have 12 values");
  const std::array<double, 12> a = to_affine(transform).params();
  Tensor out = Tensor::zeros(source.shape());
  kernels::warp_forward(dims, source.values(), a, out.mutable_values());
  if (!should_record({&source, &transform})) return out;
  out.set_requires_grad(true);
  Tape::active()->record([out, source, transform, dims, a]() mutable {
    if (!out.has_grad()) return;
    std::span<double> gs = source.requires_grad() ? source.grad_buffer() : std::span<double>{};
    std::array<double, 12> ga{};
    kernels::warp_backward(dims, source.values(), a, out.grad(), gs, transform.requires_grad() ? &ga : nullptr);
    if (transform.requires_grad()) {
      auto gt = transform.grad_buffer();
      for (size_t i = 0; i < 12; ++i) gt[i] += ga[i];
    }
  });
  return out;
}

Volume warp(const Volume& source, const AffineTransform& t) {
  Volume out(source.extents);
  out.spacing = source.spacing;
  out.intensity_range = source.intensity_range;
  kernels::warp_forward(source.extents, source.values, t.params(), out.values);
  return out;
}

LabelVolume warp_labels(const LabelVolume& labels, const AffineTransform& t, const CoordinateFrame& frame) {
  const Mat4 m = to_voxel_matrix(t, frame);
  const Extents e = labels.extents;
  LabelVolume out(e);
  out.spacing = labels.spacing;
#pragma omp parallel for schedule(static)
  for (int64_t x = 0; x < e.x; ++x)
    for (int64_t y = 0; y < e.y; ++y)
      for (int64_t z = 0; z < e.z; ++z) {
        const double p[3] = {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        int64_t q[3];
        bool inside = true;
        for (int r = 0; r < 3; ++r) {
          const double u = m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
          q[r] = static_cast<int64_t>(std::floor(u + 0.5));
          const int64_t n = r == 0 ? e.x : (r == 1 ? e.y : e.z);
          if (q[r] < 0 || q[r] >= n) inside = false;
        }
        out.at(x, y, z) = inside ? labels.at(q[0], q[1], q[2]) : 0;
      }
  return out;
}

std::string convention_name(TransformConvention c) {
  return c == TransformConvention::Voxel ? "voxel" : "normalized-centered";
}

void write_transform(std::ostream& os, const AffineTransform& t, const CoordinateFrame& frame,
                     TransformConvention convention) {
  std::array<double, 12> a = t.params();
  if (convention == TransformConvention::Voxel) a = AffineTransform::from_matrix(to_voxel_matrix(t, frame)).params();
  os << convention_name(convention) << '\n';
  os << std::setprecision(17);
  for (size_t i = 0; i < 12; ++i) os << (i ? " " : "") << a[i];
  os << '\n';
}

AffineTransform read_transform(std::istream& is, const CoordinateFrame& frame) {
  std::string header;
  if (!std::getline(is, header)) throw std::invalid_argument("transform file: missing convention header");
  while (!header.empty() && (header.back() == '\r' || header.back() == ' ')) header.pop_back();
  std::array<double, 12> a{};
  for (auto& v : a)
    if (!(is >> v)) throw std::invalid_argument("transform file: expected 12 values");
  AffineTransform t(a);
  if (header == "voxel") return from_voxel_matrix(t.matrix(), frame);
  if (header == "normalized-centered") return t;
  throw std::invalid_argument("transform file: unknown convention '" + header + "'");
}

}  // namespace ernet
