#include "ernet/ops.hpp"

#include <algorithm>
#include <cmath>

namespace ernet {

namespace {

void record(std::function<void()> fn) { Tape::active()->record(std::move(fn)); }

void require_volume(const Tensor& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected [C,W,H,D], got " + shape_to_string(x.shape()));
}

}  // namespace

kernels::Dims3 spatial_dims(const Tensor& x) {
  require_volume(x, "spatial_dims");
  return {x.dim(1), x.dim(2), x.dim(3)};
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
  const bool broadcast = b.numel() == 1 && a.numel() != 1;
  if (!broadcast && a.shape() != b.shape()) {
    throw ShapeError("elementwise: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_values();
  const auto av = a.values();
  const auto bv = b.values();
  const auto n = static_cast<int64_t>(o.size());
  auto bval = [&](int64_t i) { return broadcast ? bv[0] : bv[static_cast<size_t>(i)]; };
  switch (kind) {
    case ElementwiseKind::Add:
      for (int64_t i = 0; i < n; ++i) o[i] = av[i] + bval(i);
      break;
    case ElementwiseKind::Sub:
      for (int64_t i = 0; i < n; ++i) o[i] = av[i] - bval(i);
      break;
    case ElementwiseKind::Mul:
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < n; ++i) o[i] = av[i] * bval(i);
      break;
    case ElementwiseKind::Max:
      for (int64_t i = 0; i < n; ++i) o[i] = std::max(av[i], bval(i));
      break;
  }
  if (!should_record({&a, &b})) return out;
  out.set_requires_grad(true);
  record([kind, broadcast, out, a, b]() mutable {
    if (!out.has_grad()) return;
    const auto g = out.grad();
    const auto av = a.values();
    const auto bv = b.values();
    const auto n = static_cast<int64_t>(g.size());
    auto bidx = [&](int64_t i) { return broadcast ? size_t{0} : static_cast<size_t>(i); };
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (int64_t i = 0; i < n; ++i) {
        switch (kind) {
          case ElementwiseKind::Add:
          case ElementwiseKind::Sub: ga[i] += g[i]; break;
          case ElementwiseKind::Mul: ga[i] += g[i] * bv[bidx(i)]; break;
          case ElementwiseKind::Max: ga[i] += av[i] >= bv[bidx(i)] ? g[i] : 0.0; break;
        }
      }
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (int64_t i = 0; i < n; ++i) {
        switch (kind) {
          case ElementwiseKind::Add: gb[bidx(i)] += g[i]; break;
          case ElementwiseKind::Sub: gb[bidx(i)] -= g[i]; break;
          case ElementwiseKind::Mul: gb[bidx(i)] += g[i] * av[i]; break;
          case ElementwiseKind::Max: gb[bidx(i)] += av[i] >= bv[bidx(i)] ? 0.0 : g[i]; break;
        }
      }
    }
  });
  return out;
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b) {
  return elementwise(kind, a, Tensor::scalar(b));
}

Tensor reduce(const Tensor& x, ReduceKind kind) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  const double scale = kind == ReduceKind::Mean ? 1.0 / static_cast<double>(x.numel()) : 1.0;
  Tensor out = Tensor::scalar(total * scale);
  if (!should_record({&x})) return out;
  out.set_requires_grad(true);
  record([out, x, scale]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0] * scale;
    for (double& v : x.grad_buffer()) v += g;
  });
  return out;
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_values();
  const auto xv = x.values();
  const auto n = static_cast<int64_t>(o.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) o[i] = xv[i] > 0.0 ? xv[i] : slope * xv[i];
  if (!should_record({&x})) return out;
  out.set_requires_grad(true);
  record([out, x, slope]() mutable {
    if (!out.has_grad()) return;
    const auto g = out.grad();
    const auto xv = x.values();
    auto gx = x.grad_buffer();
    const auto n = static_cast<int64_t>(g.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) gx[i] += xv[i] > 0.0 ? g[i] : slope * g[i];
  });
  return out;
}

Tensor steep_sigmoid(const Tensor& x, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("steep_sigmoid: gamma must be positive");
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_values();
  const auto xv = x.values();
  for (size_t i = 0; i < o.size(); ++i) o[i] = 1.0 / (1.0 + std::exp(-gamma * xv[i]));
  if (!should_record({&x})) return out;
  out.set_requires_grad(true);
  record([out, x, gamma]() mutable {
    if (!out.has_grad()) return;
    const auto g = out.grad();
    const auto y = out.values();
    auto gx = x.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gamma * y[i] * (1.0 - y[i]);
  });
  return out;
}

Tensor heaviside(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_values();
  const auto xv = x.values();
  for (size_t i = 0; i < o.size(); ++i) o[i] = xv[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias, int64_t stride, int64_t padding) {
  require_volume(x, "conv3d");
  if (kernel.rank() != 5) throw ShapeError("conv3d: kernel must be [Cout,Cin,k,k,k], got " + shape_to_string(kernel.shape()));
  const int64_t k = kernel.dim(2);
  if (kernel.dim(3) != k || kernel.dim(4) != k || k % 2 == 0) {
    throw ShapeError("conv3d: kernel must be cubic with odd extent, got " + shape_to_string(kernel.shape()));
  }
  if (kernel.dim(1) != x.dim(0)) {
    throw ShapeError("conv3d: channel mismatch, input " + shape_to_string(x.shape()) + " vs kernel " +
                     shape_to_string(kernel.shape()));
  }
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv3d: stride must be 1 or 2");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != kernel.dim(0))) {
    throw ShapeError("conv3d: bias " + shape_to_string(bias.shape()) + " does not match kernel " +
                     shape_to_string(kernel.shape()));
  }
  kernels::ConvGeometry geo;
  geo.in_channels = x.dim(0);
  geo.out_channels = kernel.dim(0);
  geo.kernel = k;
  geo.stride = stride;
  geo.padding = padding;
  geo.in = spatial_dims(x);
  const kernels::Dims3 od = geo.out();
  if (od.x <= 0 || od.y <= 0 || od.z <= 0) throw ShapeError("conv3d: empty output for input " + shape_to_string(x.shape()));
  Tensor out = Tensor::zeros({geo.out_channels, od.x, od.y, od.z});
  const std::span<const double> bias_values = bias.defined() ? bias.values() : std::span<const double>{};
  kernels::conv3d_forward(geo, x.values(), kernel.values(), bias_values, out.mutable_values());
  if (!should_record({&x, &kernel, &bias})) return out;
  out.set_requires_grad(true);
  record([geo, out, x, kernel, bias]() mutable {
    if (!out.has_grad()) return;
    std::span<double> gx = x.requires_grad() ? x.grad_buffer() : std::span<double>{};
    std::span<double> gw = kernel.requires_grad() ? kernel.grad_buffer() : std::span<double>{};
    std::span<double> gb = (bias.defined() && bias.requires_grad()) ? bias.grad_buffer() : std::span<double>{};
    kernels::conv3d_backward(geo, x.values(), kernel.values(), out.grad(), gx, gw, gb);
  });
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_volume(x, "upsample_nearest2x");
  const int64_t c = x.dim(0), w = x.dim(1), h = x.dim(2), d = x.dim(3);
  Tensor out = Tensor::zeros({c, 2 * w, 2 * h, 2 * d});
  auto o = out.mutable_values();
  const auto xv = x.values();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < 2 * w; ++i)
      for (int64_t j = 0; j < 2 * h; ++j)
        for (int64_t k = 0; k < 2 * d; ++k)
          o[((ch * 2 * w + i) * 2 * h + j) * 2 * d + k] = xv[((ch * w + i / 2) * h + j / 2) * d + k / 2];
  if (!should_record({&x})) return out;
  out.set_requires_grad(true);
  record([out, x, c, w, h, d]() mutable {
    if (!out.has_grad()) return;
    const auto g = out.grad();
    auto gx = x.grad_buffer();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < 2 * w; ++i)
        for (int64_t j = 0; j < 2 * h; ++j)
          for (int64_t k = 0; k < 2 * d; ++k)
            gx[((ch * w + i / 2) * h + j / 2) * d + k / 2] += g[((ch * 2 * w + i) * 2 * h + j) * 2 * d + k];
  });
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_volume(a, "concat_channels");
  require_volume(b, "concat_channels");
  if (spatial_dims(a) != spatial_dims(b)) {
    throw ShapeError("concat_channels: spatial mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  Tensor out = Tensor::zeros({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
  auto o = out.mutable_values();
  std::copy(a.values().begin(), a.values().end(), o.begin());
  std::copy(b.values().begin(), b.values().end(), o.begin() + a.numel());
  if (!should_record({&a, &b})) return out;
  out.set_requires_grad(true);
  record([out, a, b]() mutable {
    if (!out.has_grad()) return;
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      const auto off = static_cast<size_t>(a.numel());
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[off + i];
    }
  });
  return out;
}

Tensor pad_spatial(const Tensor& x, const std::array<int64_t, 3>& before, const std::array<int64_t, 3>& after) {
  require_volume(x, "pad_spatial");
  const int64_t c = x.dim(0), w = x.dim(1), h = x.dim(2), d = x.dim(3);
  const int64_t W = w + before[0] + after[0], H = h + before[1] + after[1], D = d + before[2] + after[2];
  Tensor out = Tensor::zeros({c, W, H, D});
  auto o = out.mutable_values();
  const auto xv = x.values();
  auto dst = [before, W, H, D](int64_t ch, int64_t i, int64_t j, int64_t k) {
    return static_cast<size_t>(((ch * W + i + before[0]) * H + j + before[1]) * D + k + before[2]);
  };
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < w; ++i)
      for (int64_t j = 0; j < h; ++j)
        for (int64_t k = 0; k < d; ++k) o[dst(ch, i, j, k)] = xv[((ch * w + i) * h + j) * d + k];
  if (!should_record({&x})) return out;
  out.set_requires_grad(true);
  record([out, x, c, w, h, d, dst]() mutable {
    if (!out.has_grad()) return;
    const auto g = out.grad();
    auto gx = x.grad_buffer();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < w; ++i)
        for (int64_t j = 0; j < h; ++j)
          for (int64_t k = 0; k < d; ++k) gx[((ch * w + i) * h + j) * d + k] += g[dst(ch, i, j, k)];
  });
  return out;
}

Tensor global_average_pool(const Tensor& x) {
  require_volume(x, "global_average_pool");
  const int64_t c = x.dim(0);
  const int64_t n = x.dim(1) * x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({c});
  auto o = out.mutable_values();
  const auto xv = x.values();
  for (int64_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += xv[ch * n + i];
    o[ch] = acc / static_cast<double>(n);
  }
  if (!should_record({&x})) return out;
  out.set_requires_grad(true);
  record([out, x, c, n]() mutable {
    if (!out.has_grad()) return;
    const auto g = out.grad();
    auto gx = x.grad_buffer();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < n; ++i) gx[ch * n + i] += g[ch] / static_cast<double>(n);
  });
  return out;
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 1 || weight.rank() != 2 || weight.dim(1) != x.dim(0)) {
    throw ShapeError("dense: dim mismatch, input " + shape_to_string(x.shape()) + " vs weight " +
                     shape_to_string(weight.shape()));
  }
  const int64_t m = weight.dim(0), n = weight.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != m) {
    throw ShapeError("dense: bias " + shape_to_string(bias.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  Tensor out = Tensor::zeros({m});
  auto o = out.mutable_values();
  const auto xv = x.values();
  const auto wv = weight.values();
  const auto bv = bias.values();
  for (int64_t r = 0; r < m; ++r) {
    double acc = bv[r];
    for (int64_t c = 0; c < n; ++c) acc += wv[r * n + c] * xv[c];
    o[r] = acc;
  }
  if (!should_record({&x, &weight, &bias})) return out;
  out.set_requires_grad(true);
  record([out, x, weight, bias, m, n]() mutable {
    if (!out.has_grad()) return;
    const auto g = out.grad();
    const auto xv = x.values();
    const auto wv = weight.values();
    if (x.requires_grad()) {
      auto gx = x.grad_buffer();
      for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < n; ++c) gx[c] += wv[r * n + c] * g[r];
    }
    if (weight.requires_grad()) {
      auto gw = weight.grad_buffer();
      for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < n; ++c) gw[r * n + c] += g[r] * xv[c];
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad_buffer();
      for (int64_t r = 0; r < m; ++r) gb[r] += g[r];
    }
  });
  return out;
}

}  // namespace ernet
