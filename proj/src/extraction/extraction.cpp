#include "ernet/extraction.hpp"

#include <stdexcept>

#include "ernet/ops.hpp"

namespace ernet {

ExtractionWidths ExtractionWidths::reduced(int64_t divisor) {
  if (divisor < 1) throw std::invalid_argument("width divisor must be >= 1");
  ExtractionWidths w;
  for (auto& f : w.filters) f = std::max<int64_t>(1, f / divisor);
  return w;
}

ExtractionNet::ExtractionNet(const ExtractionWidths& widths, double gamma, Rng& rng) : widths_(widths), gamma_(gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("sigmoid slope gamma must be positive");
  const auto& w = widths.filters;
  convs_[0] = ConvLayer::he(1, w[0], 3, 1, rng);
  convs_[1] = ConvLayer::he(w[0], w[1], 3, 2, rng);
  convs_[2] = ConvLayer::he(w[1], w[2], 3, 1, rng);
  convs_[3] = ConvLayer::he(w[2], w[3], 3, 2, rng);
  convs_[4] = ConvLayer::he(w[3], w[4], 3, 1, rng);
  convs_[5] = ConvLayer::he(w[4], w[5], 3, 1, rng);
  convs_[6] = ConvLayer::he(w[5] + w[2], w[6], 3, 1, rng);
  convs_[7] = ConvLayer::he(w[6], w[7], 3, 1, rng);
  convs_[8] = ConvLayer::he(w[7] + w[0], w[8], 3, 1, rng);
  convs_[9] = ConvLayer::he(w[8], w[9], 3, 1, rng);
  head_ = ConvLayer::zeros(w[9], 1, 1, 1);
  head_.bias.mutable_values()[0] = 0.5;
}

Tensor ExtractionNet::logits(const Tensor& image) const {
  const auto d = spatial_dims(image);
  if (d.x % 4 != 0 || d.y % 4 != 0 || d.z % 4 != 0) {
    throw ShapeError("extraction: spatial extents must be divisible by 4, got " + shape_to_string(image.shape()));
  }
  auto act = [](const Tensor& t) { return leaky_relu(t, kLeakySlope); };
  const Tensor e1 = act(convs_[0](image));
  const Tensor e2 = act(convs_[1](e1));
  const Tensor e3 = act(convs_[2](e2));
  const Tensor e4 = act(convs_[3](e3));
  const Tensor e5 = act(convs_[4](e4));
  const Tensor d6 = act(convs_[5](e5));
  const Tensor d7 = act(convs_[6](concat_channels(upsample_nearest2x(d6), e3)));
  const Tensor d8 = act(convs_[7](d7));
  const Tensor d9 = act(convs_[8](concat_channels(upsample_nearest2x(d8), e1)));
  const Tensor d10 = act(convs_[9](d9));
  return head_(d10);
}

Tensor ExtractionNet::predict_mask(const Tensor& image, Mode mode) const {
  const Tensor z = logits(image);
  return mode == Mode::Train ? steep_sigmoid(z, gamma_) : heaviside(z);
}

std::vector<NamedTensor> ExtractionNet::parameters() const {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < convs_.size(); ++i) append_parameters(out, "extraction.conv" + std::to_string(i + 1), convs_[i]);
  append_parameters(out, "extraction.head", head_);
  return out;
}

Tensor overlay(const Tensor& image, const Tensor& mask) {
  if (image.shape() != mask.shape()) {
    throw ShapeError("overlay: shape mismatch " + shape_to_string(image.shape()) + " vs " + shape_to_string(mask.shape()));
  }
  return mul(image, mask);
}

Tensor ExtractionTrace::cumulative_mask() const {
  if (masks.empty()) throw std::logic_error("cumulative_mask: no stages");
  Tensor m = masks.front();
  for (size_t j = 1; j < masks.size(); ++j) m = mul(m, masks[j]);
  return m;
}

ExtractionTrace run_extraction(const MaskPredictor& predictor, const Tensor& source, int64_t stages, Mode mode) {
  if (stages < 1) throw std::invalid_argument("run_extraction: stage count must be >= 1");
  ExtractionTrace trace;
  trace.images.push_back(source);
  for (int64_t j = 0; j < stages; ++j) {
    Tensor m = predictor(trace.images.back(), mode);
    trace.images.push_back(overlay(trace.images.back(), m));
    trace.masks.push_back(std::move(m));
  }
  return trace;
}

ExtractionTrace run_extraction(const ExtractionNet& net, const Tensor& source, int64_t stages, Mode mode) {
  return run_extraction([&net](const Tensor& x, Mode m) { return net.predict_mask(x, m); }, source, stages, mode);
}

}  // namespace ernet
