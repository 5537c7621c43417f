// Shared-weight multi-stage affine registration: an encoder predicts an incremental
// transform from (previous warp, target); increments are composed and the extracted
// image is warped once per stage by the combined transform.
#pragma once

#include <array>
#include <functional>
#include <vector>

#include "ernet/geometry.hpp"
#include "ernet/layers.hpp"

namespace ernet {

struct RegistrationWidths {
  std::array<int64_t, 6> filters{16, 32, 64, 128, 256, 512};
  int64_t hidden = 128;

  /// Conv widths divided by `divisor`; the dense sizes are kept.
  static RegistrationWidths reduced(int64_t divisor);
};

class RegistrationNet {
 public:
  RegistrationNet(const RegistrationWidths& widths, Rng& rng);

  /// 12 transform entries (identity plus predicted residual) for [1,W,H,D] inputs.
  Tensor predict_increment(const Tensor& warped, const Tensor& target) const;

  const RegistrationWidths& widths() const { return widths_; }
  std::vector<NamedTensor> parameters() const;
  DenseLayer& output_layer() { return fc2_; }

 private:
  RegistrationWidths widths_;
  std::array<ConvLayer, 6> convs_;
  DenseLayer fc1_, fc2_;
};

/// Symmetric zero padding that brings `n` up to the next multiple of 64.
std::array<int64_t, 2> pad_to_multiple_of_64(int64_t n);

struct RegistrationTrace {
  std::vector<Tensor> increments;  // A_i^1..A_i^N, each [12]
  std::vector<Tensor> combined;    // A_c^0..A_c^N, A_c^0 = identity
  std::vector<Tensor> warped;      // W^0..W^N, W^0 = E^M

  const Tensor& output() const { return warped.back(); }
  const Tensor& transform() const { return combined.back(); }
};

using IncrementPredictor = std::function<Tensor(const Tensor& warped, const Tensor& target)>;

RegistrationTrace run_registration(const RegistrationNet& net, const Tensor& extracted, const Tensor& target,
                                   int64_t stages, const CoordinateFrame& frame);
RegistrationTrace run_registration(const IncrementPredictor& predictor, const Tensor& extracted, const Tensor& target,
                                   int64_t stages, const CoordinateFrame& frame);

/// Control for the single-interpolation design: re-interpolates the previous warp at every
/// stage (with each step conjugated so the final geometry equals the composed transform).
Volume sequential_rewarp(const Volume& image, const std::vector<AffineTransform>& increments);

}  // namespace ernet
