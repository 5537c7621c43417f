// OpenMP-parallel numeric kernels behind the differentiable operations.
// Every kernel here has a serial nested-loop counterpart in refcheck.hpp.
#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace ernet::kernels {

struct Dims3 {
  int64_t x = 1, y = 1, z = 1;
  int64_t count() const { return x * y * z; }
  bool operator==(const Dims3&) const = default;
};

struct ConvGeometry {
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t padding = 1;
  Dims3 in;
  Dims3 out() const;
};

// Sets the worker count used by the OpenMP kernels (and pins BLAS to one thread
// so the two never oversubscribe). 0 keeps the OpenMP default.
void set_num_threads(int threads);
int num_threads();

// input [Cin, in], weight [Cout, Cin, k, k, k], bias [Cout] (may be empty), output [Cout, out].
void conv3d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);

// Accumulates into whichever gradient spans are non-empty.
void conv3d_backward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                     std::span<const double> grad_output, std::span<double> grad_input,
                     std::span<double> grad_weight, std::span<double> grad_bias);

// Backward warp with trilinear weights max(0, 1 - |u - o|), zero outside the grid.
// `affine` holds the top three rows of a 4x4 matrix acting on normalized-centered
// coordinates (each axis mapped to [-1, 1]).
void warp_forward(Dims3 dims, std::span<const double> source, const std::array<double, 12>& affine,
                  std::span<double> output);
void warp_backward(Dims3 dims, std::span<const double> source, const std::array<double, 12>& affine,
                   std::span<const double> grad_output, std::span<double> grad_source,
                   std::array<double, 12>* grad_affine);

// Zero-padded cubic box sum with odd window `window`.
void box_sum(Dims3 dims, int64_t window, std::span<const double> input, std::span<double> output);

// Windowed squared correlation per voxel; returns -mean(cc^2) and optionally the per-voxel
// partial derivatives needed for the backward pass.
double ncc_forward(Dims3 dims, int64_t window, double eps, std::span<const double> a, std::span<const double> b);
void ncc_backward(Dims3 dims, int64_t window, double eps, std::span<const double> a, std::span<const double> b,
                  double grad_loss, std::span<double> grad_a, std::span<double> grad_b);

// Sum of squared forward differences along each axis.
double smoothness_forward(Dims3 dims, std::span<const double> mask);
void smoothness_backward(Dims3 dims, std::span<const double> mask, double grad_out, std::span<double> grad_mask);

}  // namespace ernet::kernels
