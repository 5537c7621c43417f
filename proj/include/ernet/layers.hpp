// Parameterized building blocks shared by both networks.
#pragma once

#include <string>
#include <vector>

#include "ernet/optim.hpp"
#include "ernet/phantom.hpp"
#include "ernet/tensor.hpp"

namespace ernet {

inline constexpr double kLeakySlope = 0.2;

struct ConvLayer {
  Tensor weight;  // [Cout, Cin, k, k, k]
  Tensor bias;    // [Cout]
  int64_t stride = 1;
  int64_t padding = 1;

  /// He-normal weights for a leaky activation of slope 0.2; zero bias.
  static ConvLayer he(int64_t in, int64_t out, int64_t kernel, int64_t stride, Rng& rng);
  static ConvLayer zeros(int64_t in, int64_t out, int64_t kernel, int64_t stride);

  Tensor operator()(const Tensor& x) const;
};

struct DenseLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static DenseLayer he(int64_t in, int64_t out, Rng& rng);
  static DenseLayer zeros(int64_t in, int64_t out);

  Tensor operator()(const Tensor& x) const;
};

void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix, const ConvLayer& layer);
void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix, const DenseLayer& layer);

}  // namespace ernet
