// Affine transforms in homogeneous coordinates and the spatial transformation layer.
//
// Transforms act on normalized-centered coordinates: voxel index i on an axis of
// extent n maps to 2 i / (n - 1) - 1, so rotations and scales act about the volume
// centre. A transform maps an output (target) coordinate to the source coordinate
// that is sampled there (backward warping).
#pragma once

#include <array>
#include <iosfwd>
#include <string>

#include "ernet/tensor.hpp"
#include "ernet/volume.hpp"

namespace ernet {

using Vec3 = std::array<double, 3>;
using Mat4 = std::array<std::array<double, 4>, 4>;

Mat4 mat4_identity();
Mat4 mat4_multiply(const Mat4& a, const Mat4& b);
Mat4 mat4_inverse(const Mat4& m);

class AffineTransform {
 public:
  AffineTransform();  // identity
  explicit AffineTransform(const std::array<double, 12>& params) : a_(params) {}

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(const Vec3& t);
  /// Throws std::invalid_argument unless the last row is (0, 0, 0, 1).
  static AffineTransform from_matrix(const Mat4& m);

  const std::array<double, 12>& params() const { return a_; }
  Mat4 matrix() const;
  Vec3 map_point(const Vec3& p) const;
  AffineTransform inverse() const;
  Vec3 translation_part() const { return {a_[3], a_[7], a_[11]}; }

  bool operator==(const AffineTransform&) const = default;

 private:
  std::array<double, 12> a_;
};

/// Matrix of the result is outer.matrix() * inner.matrix(): apply `inner`, then `outer`.
AffineTransform compose(const AffineTransform& inner, const AffineTransform& outer);

inline Vec3 map_point(const AffineTransform& t, const Vec3& p) { return t.map_point(p); }

struct CoordinateFrame {
  Extents extents;

  /// Maps voxel indices to normalized-centered coordinates.
  Mat4 normalization() const;
  Mat4 denormalization() const;
  double voxels_per_unit(int axis) const;
};

/// Voxel-space form N^-1 * A * N of a normalized-centered transform.
Mat4 to_voxel_matrix(const AffineTransform& t, const CoordinateFrame& frame);
AffineTransform from_voxel_matrix(const Mat4& m, const CoordinateFrame& frame);

/// Distance in voxels between the images of the volume centre under `a` and `b`.
double translation_error_voxels(const AffineTransform& a, const AffineTransform& b, const CoordinateFrame& frame);

/// Differentiable composition of two [12] parameter tensors (outer * inner).
Tensor compose(const Tensor& inner, const Tensor& outer);

/// Differentiable trilinear backward warp of source [1, W, H, D] by transform [12].
Tensor warp(const Tensor& source, const Tensor& transform, const CoordinateFrame& frame);
Volume warp(const Volume& source, const AffineTransform& t);

/// Nearest-neighbour warp of integer labels; samples outside the grid are background (0).
LabelVolume warp_labels(const LabelVolume& labels, const AffineTransform& t, const CoordinateFrame& frame);

Tensor to_tensor(const AffineTransform& t, bool requires_grad = false);
AffineTransform to_affine(const Tensor& t);

enum class TransformConvention { NormalizedCentered, Voxel };

/// Text form: a header line naming the convention, then 12 row-major values on one line.
void write_transform(std::ostream& os, const AffineTransform& t, const CoordinateFrame& frame,
                     TransformConvention convention);
/// Reads either convention and returns the normalized-centered transform.
AffineTransform read_transform(std::istream& is, const CoordinateFrame& frame);
std::string convention_name(TransformConvention c);

}  // namespace ernet
