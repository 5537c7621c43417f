#pragma once

#include <string>
#include <vector>

#include "ernet/tensor.hpp"

namespace ernet {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct AdamConfig {
  double lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates per parameter plus the shared step count.
struct AdamState {
  int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// Adam with bias correction. Throws if a parameter has no gradient (pass
/// `allow_missing_grad` for parameters that legitimately received none, e.g. a
/// disabled module; those are left untouched).
void adam_step(std::vector<NamedTensor>& params, AdamState& state, const AdamConfig& config,
               bool allow_missing_grad = false);

}  // namespace ernet
