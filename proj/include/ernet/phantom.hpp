// Synthetic head phantoms with known brain mask, structure labels and transform,
// and random affine sampling for augmentation.
#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "ernet/geometry.hpp"
#include "ernet/io.hpp"
#include "ernet/volume.hpp"

namespace ernet {

/// Seeded generator with explicitly defined sampling so sequences do not depend on the
/// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  uint64_t index(uint64_t n);  // [0, n)
  std::mt19937_64& engine() { return engine_; }

  /// Text snapshot of the full generator state, for bitwise resume.
  std::string state() const;
  void set_state(const std::string& text);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct AugmentationRanges {
  double translation = 0.0;  // +- voxels
  double rotation = 0.0;     // +- degrees, each Euler angle
  double scale_lo = 1.0, scale_hi = 1.0;

  bool is_identity() const { return translation == 0.0 && rotation == 0.0 && scale_lo == 1.0 && scale_hi == 1.0; }
  static AugmentationRanges lpba40() { return {5.0, 5.0, 0.98, 1.02}; }
};

/// Isotropic scale times Rz Ry Rx, plus a translation, in normalized-centered coordinates.
AffineTransform random_affine(const AugmentationRanges& ranges, Rng& rng, const CoordinateFrame& frame);

struct PhantomSample {
  Volume source;         // skull-on head, perturbed, noisy, min-max normalized
  Volume target;         // unperturbed brain only
  Volume truth_mask;     // brain mask in source space
  LabelVolume truth_labels;   // structure labels in source space
  Volume target_mask;
  LabelVolume target_labels;
  AffineTransform truth_transform;  // warp(source, truth_transform) aligns to target
};

/// Deterministic in `seed`. Every extent must be at least 32.
PhantomSample make_phantom(uint64_t seed, const Extents& extents, const AugmentationRanges& ranges);

PairData to_pair(const PhantomSample& p, const std::string& name);

/// Re-samples the source side of a pair through `a` (values trilinear, mask and labels nearest
/// neighbour) and updates the truth transform so it still maps onto the target.
PairData augment(const PairData& pair, const AffineTransform& a);

/// Nearest-neighbour warp of a binary mask.
Volume warp_mask(const Volume& mask, const AffineTransform& t);

}  // namespace ernet
