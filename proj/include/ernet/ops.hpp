// Differentiable tensor operations. Each op records a backward closure on the
// active tape when any input requires a gradient.
#pragma once

#include "ernet/kernels.hpp"
#include "ernet/tensor.hpp"

namespace ernet {

enum class ElementwiseKind { Add, Sub, Mul, Max };
enum class ReduceKind { Sum, Mean };

/// Elementwise binary op. `b` must match `a`'s shape or hold a single value.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Mul, a, b); }
inline Tensor maximum(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Max, a, b); }

Tensor reduce(const Tensor& x, ReduceKind kind);
inline Tensor sum(const Tensor& x) { return reduce(x, ReduceKind::Sum); }
inline Tensor mean(const Tensor& x) { return reduce(x, ReduceKind::Mean); }

Tensor leaky_relu(const Tensor& x, double negative_slope = 0.2);

/// y = 1 / (1 + exp(-gamma x)); gamma must be positive.
Tensor steep_sigmoid(const Tensor& x, double gamma);

/// 1 where x > 0, else 0. Not differentiable; never recorded.
Tensor heaviside(const Tensor& x);

/// x [C_in, W, H, D], kernel [C_out, C_in, k, k, k], bias [C_out] or undefined.
Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias, int64_t stride, int64_t padding);

/// Doubles every spatial extent of x [C, W, H, D] by voxel replication.
Tensor upsample_nearest2x(const Tensor& x);

/// Concatenates [C1, W, H, D] and [C2, W, H, D] along channels.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Zero-pads the spatial axes of x [C, W, H, D]; `before`/`after` per axis.
Tensor pad_spatial(const Tensor& x, const std::array<int64_t, 3>& before, const std::array<int64_t, 3>& after);

/// x [C, W, H, D] -> [C] spatial mean.
Tensor global_average_pool(const Tensor& x);

/// weight [m, n] * x [n] + bias [m].
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Spatial extents of a [C, W, H, D] tensor.
kernels::Dims3 spatial_dims(const Tensor& x);

}  // namespace ernet
