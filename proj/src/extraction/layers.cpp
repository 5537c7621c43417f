#include "ernet/layers.hpp"

#include <cmath>

#include "ernet/ops.hpp"

namespace ernet {

namespace {

Tensor he_normal(Shape shape, int64_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope)) / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.mutable_values()) v = sd * rng.normal();
  return t;
}

}  // namespace

ConvLayer ConvLayer::he(int64_t in, int64_t out, int64_t kernel, int64_t stride, Rng& rng) {
  ConvLayer l;
  l.weight = he_normal({out, in, kernel, kernel, kernel}, in * kernel * kernel * kernel, rng);
  l.bias = Tensor::zeros({out}, true);
  l.stride = stride;
  l.padding = (kernel - 1) / 2;
  return l;
}

ConvLayer ConvLayer::zeros(int64_t in, int64_t out, int64_t kernel, int64_t stride) {
  ConvLayer l;
  l.weight = Tensor::zeros({out, in, kernel, kernel, kernel}, true);
  l.bias = Tensor::zeros({out}, true);
  l.stride = stride;
  l.padding = (kernel - 1) / 2;
  return l;
}

Tensor ConvLayer::operator()(const Tensor& x) const { return conv3d(x, weight, bias, stride, padding); }

DenseLayer DenseLayer::he(int64_t in, int64_t out, Rng& rng) {
  return {he_normal({out, in}, in, rng), Tensor::zeros({out}, true)};
}

DenseLayer DenseLayer::zeros(int64_t in, int64_t out) {
  return {Tensor::zeros({out, in}, true), Tensor::zeros({out}, true)};
}

Tensor DenseLayer::operator()(const Tensor& x) const { return dense(x, weight, bias); }

void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix, const ConvLayer& layer) {
  out.push_back({prefix + ".weight", layer.weight});
  out.push_back({prefix + ".bias", layer.bias});
}

void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix, const DenseLayer& layer) {
  out.push_back({prefix + ".weight", layer.weight});
  out.push_back({prefix + ".bias", layer.bias});
}

}  // namespace ernet
