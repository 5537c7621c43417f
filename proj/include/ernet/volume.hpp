// Scalar and label grids. Voxel (x, y, z) lives at index (x * H + y) * D + z.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ernet/kernels.hpp"
#include "ernet/tensor.hpp"

namespace ernet {

using Extents = kernels::Dims3;

struct Volume {
  Extents extents;
  std::vector<double> values;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  // Min/max recorded before normalization (equal when never normalized).
  std::array<double, 2> intensity_range{0.0, 0.0};

  Volume() = default;
  explicit Volume(Extents e, double fill = 0.0) : extents(e), values(static_cast<size_t>(e.count()), fill) {}

  int64_t index(int64_t x, int64_t y, int64_t z) const { return (x * extents.y + y) * extents.z + z; }
  double& at(int64_t x, int64_t y, int64_t z) { return values[static_cast<size_t>(index(x, y, z))]; }
  double at(int64_t x, int64_t y, int64_t z) const { return values[static_cast<size_t>(index(x, y, z))]; }
};

// Binary {0,1} at inference, continuous in [0,1] while training.
using MaskVolume = Volume;

struct LabelVolume {
  Extents extents;
  std::vector<int32_t> labels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  LabelVolume() = default;
  explicit LabelVolume(Extents e, int32_t fill = 0) : extents(e), labels(static_cast<size_t>(e.count()), fill) {}

  int64_t index(int64_t x, int64_t y, int64_t z) const { return (x * extents.y + y) * extents.z + z; }
  int32_t& at(int64_t x, int64_t y, int64_t z) { return labels[static_cast<size_t>(index(x, y, z))]; }
  int32_t at(int64_t x, int64_t y, int64_t z) const { return labels[static_cast<size_t>(index(x, y, z))]; }
};

/// Single-channel [1, W, H, D] tensor view of a volume (copies).
Tensor to_tensor(const Volume& v, bool requires_grad = false);
Volume to_volume(const Tensor& t, const std::array<double, 3>& spacing = {1.0, 1.0, 1.0});

/// Voxels > 0.5 become 1.
Volume binarize(const Volume& v);
LabelVolume mask_to_labels(const Volume& mask);
Volume labels_to_mask(const LabelVolume& labels);

}  // namespace ernet
