#include "ernet/registration.hpp"

#include <stdexcept>

#include "ernet/ops.hpp"

namespace ernet {

RegistrationWidths RegistrationWidths::reduced(int64_t divisor) {
  if (divisor < 1) throw std::invalid_argument("width divisor must be >= 1");
  RegistrationWidths w;
  for (auto& f : w.filters) f = std::max<int64_t>(1, f / divisor);
  return w;
}

RegistrationNet::RegistrationNet(const RegistrationWidths& widths, Rng& rng) : widths_(widths) {
  int64_t in = 2;
  for (size_t i = 0; i < convs_.size(); ++i) {
    convs_[i] = ConvLayer::he(in, widths.filters[i], 3, 2, rng);
    in = widths.filters[i];
  }
  fc1_ = DenseLayer::he(in, widths.hidden, rng);
  fc2_ = DenseLayer::zeros(widths.hidden, 12);
}

std::array<int64_t, 2> pad_to_multiple_of_64(int64_t n) {
  const int64_t total = (64 - n % 64) % 64;
  return {total / 2, total - total / 2};
}

Tensor RegistrationNet::predict_increment(const Tensor& warped, const Tensor& target) const {
  if (warped.shape() != target.shape()) {
    throw ShapeError("predict_increment: shape mismatch " + shape_to_string(warped.shape()) + " vs " +
                     shape_to_string(target.shape()));
  }
  const auto d = spatial_dims(warped);
  const auto px = pad_to_multiple_of_64(d.x), py = pad_to_multiple_of_64(d.y), pz = pad_to_multiple_of_64(d.z);
  Tensor x = concat_channels(warped, target);
  if (px[0] + px[1] + py[0] + py[1] + pz[0] + pz[1] > 0) x = pad_spatial(x, {px[0], py[0], pz[0]}, {px[1], py[1], pz[1]});
  for (const auto& c : convs_) x = leaky_relu(c(x), kLeakySlope);
  x = global_average_pool(x);
  x = leaky_relu(fc1_(x), kLeakySlope);
  const Tensor residual = fc2_(x);
  return add(residual, to_tensor(AffineTransform::identity()));
}

std::vector<NamedTensor> RegistrationNet::parameters() const {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < convs_.size(); ++i) append_parameters(out, "registration.conv" + std::to_string(i + 1), convs_[i]);
  append_parameters(out, "registration.fc1", fc1_);
  append_parameters(out, "registration.fc2", fc2_);
  return out;
}

RegistrationTrace run_registration(const IncrementPredictor& predictor, const Tensor& extracted, const Tensor& target,
                                   int64_t stages, const CoordinateFrame& frame) {
  if (stages < 1) throw std::invalid_argument("run_registration: stage count must be >= 1");
  RegistrationTrace trace;
  trace.combined.push_back(to_tensor(AffineTransform::identity()));
  trace.warped.push_back(extracted);
  for (int64_t k = 0; k < stages; ++k) {
    Tensor inc = predictor(trace.warped.back(), target);
    Tensor comb = compose(trace.combined.back(), inc);
    trace.warped.push_back(warp(extracted, comb, frame));
    trace.increments.push_back(std::move(inc));
    trace.combined.push_back(std::move(comb));
  }
  return trace;
}

RegistrationTrace run_registration(const RegistrationNet& net, const Tensor& extracted, const Tensor& target,
                                   int64_t stages, const CoordinateFrame& frame) {
  return run_registration([&net](const Tensor& w, const Tensor& t) { return net.predict_increment(w, t); }, extracted,
                          target, stages, frame);
}

Volume sequential_rewarp(const Volume& image, const std::vector<AffineTransform>& increments) {
  Volume current = image;
  AffineTransform combined;
  for (const auto& inc : increments) {
    // W^k(p) = W^{k-1}(B p) with B = C^-1 * inc * C reproduces sampling at inc(C(p)).
    const AffineTransform step = compose(compose(combined, inc), combined.inverse());
    current = warp(current, step);
    combined = compose(combined, inc);
  }
  return current;
}

}  // namespace ernet
