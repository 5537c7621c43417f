// Shared-weight multi-stage extraction: a U-Net mask predictor applied repeatedly,
// each stage multiplying the previous image by its mask (overlay).
#pragma once

#include <array>
#include <vector>

#include "ernet/layers.hpp"

namespace ernet {

enum class Mode { Train, Infer };

struct ExtractionWidths {
  std::array<int64_t, 10> filters{16, 32, 32, 64, 64, 64, 32, 32, 32, 16};

  /// Every width divided by `divisor` (at least 1 channel).
  static ExtractionWidths reduced(int64_t divisor);
};

class ExtractionNet {
 public:
  ExtractionNet(const ExtractionWidths& widths, double gamma, Rng& rng);

  /// Raw mask logits for a [1,W,H,D] image; extents must be divisible by 4.
  Tensor logits(const Tensor& image) const;
  /// Train: steep sigmoid of the logits. Infer: Heaviside step of the logits.
  Tensor predict_mask(const Tensor& image, Mode mode) const;

  double gamma() const { return gamma_; }
  const ExtractionWidths& widths() const { return widths_; }
  std::vector<NamedTensor> parameters() const;
  ConvLayer& head() { return head_; }

 private:
  ExtractionWidths widths_;
  double gamma_;
  std::array<ConvLayer, 10> convs_;
  ConvLayer head_;
};

/// Elementwise product of an image with a mask.
Tensor overlay(const Tensor& image, const Tensor& mask);

struct ExtractionTrace {
  std::vector<Tensor> masks;   // M^1..M^M
  std::vector<Tensor> images;  // E^0..E^M, E^0 = S

  const Tensor& output() const { return images.back(); }
  /// Product of all stage masks (binary in infer mode).
  Tensor cumulative_mask() const;
};

/// Stage function used by run_extraction; lets tests substitute an oracle predictor.
using MaskPredictor = std::function<Tensor(const Tensor& image, Mode mode)>;

ExtractionTrace run_extraction(const ExtractionNet& net, const Tensor& source, int64_t stages, Mode mode);
ExtractionTrace run_extraction(const MaskPredictor& predictor, const Tensor& source, int64_t stages, Mode mode);

}  // namespace ernet
