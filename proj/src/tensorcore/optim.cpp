#include "ernet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ernet {

void adam_step(std::vector<NamedTensor>& params, AdamState& state, const AdamConfig& config,
               bool allow_missing_grad) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
      state.second_moment.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw std::invalid_argument("adam_step: state/parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (static_cast<int64_t>(state.first_moment[i].size()) != params[i].tensor.numel() ||
        static_cast<int64_t>(state.second_moment[i].size()) != params[i].tensor.numel()) {
      throw ShapeError("adam_step: state shape mismatch for " + params[i].name);
    }
    if (!params[i].tensor.has_grad() && !allow_missing_grad) {
      throw std::invalid_argument("adam_step: missing gradient for parameter " + params[i].name);
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_values();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace ernet
