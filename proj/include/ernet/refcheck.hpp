// Brute-force reference implementations. None of these call into the fast kernels;
// they are direct nested-loop transliterations used by tests and `ernet verify`.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ernet/kernels.hpp"
#include "ernet/tensor.hpp"
#include "ernet/volume.hpp"

namespace ernet::refcheck {

using kernels::Dims3;

std::vector<double> naive_conv(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t stride,
                               int64_t padding, Dims3 in, const std::vector<double>& input,
                               const std::vector<double>& weight, const std::vector<double>& bias);

/// Maps (x, y, z) voxel indices through a normalized-centered affine, returning voxel coordinates.
std::array<double, 3> naive_map_voxel(Dims3 dims, const std::array<double, 12>& affine, double x, double y, double z);

/// Full-grid form: every source voxel is weighted by max(0, 1 - |x' - o|) per axis.
std::vector<double> naive_warp(Dims3 dims, const std::vector<double>& source, const std::array<double, 12>& affine);

std::vector<int32_t> naive_warp_labels(Dims3 dims, const std::vector<int32_t>& labels,
                                       const std::array<double, 12>& affine);

/// -mean of squared windowed correlation, each window summed explicitly (zero outside the grid).
double naive_ncc(Dims3 dims, int64_t window, double eps, const std::vector<double>& a, const std::vector<double>& b);

double naive_smoothness(Dims3 dims, const std::vector<double>& mask);

/// Homogeneous 4x4 product of the two transforms applied to a point, one after the other.
std::array<double, 3> naive_map_point(const std::array<double, 12>& a, const std::array<double, 3>& p);

/// Dice from explicit index sets.
double brute_dice(const std::vector<double>& a, const std::vector<double>& b);
/// Mean per-label Dice over nonzero labels in either volume, from explicit index sets.
double brute_label_dice(const std::vector<int32_t>& a, const std::vector<int32_t>& b);

/// 6-connected components by union-find.
int64_t union_find_components(Dims3 dims, const std::vector<double>& mask);

/// Central differences of `f` at `x` with step `h`.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                double h);

/// max |a - b| / max(max |b|, floor).
double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12);
double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b);

/// Autodiff vs central differences for a scalar function of several tensors. Every input
/// must require grad. Returns the worst relative error over inputs. When `max_entries` is
/// positive, only that many randomly chosen entries per input are differenced.
double gradient_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, const std::vector<Tensor>& inputs,
                      double h = 1e-5, int64_t max_entries = 0, uint64_t seed = 0);

/// Averages non-overlapping factor^3 blocks (extents must be divisible by `factor`).
Volume block_average(const Volume& v, int64_t factor);

struct ModelGradientReport {
  std::vector<std::pair<std::string, double>> per_tensor;  // relative error per parameter tensor
  double max_error = 0.0;
  double seconds = 0.0;
};

/// Total-loss gradients of a width-reduced M = N = 2 model on an 8^3 phantom (a 32^3 phantom
/// block-averaged by 4) against central differences at steps h, h/3 and h/10 (the best one per
/// tensor), for every parameter tensor. Zero-initialized
/// output layers are first given small random values so no gradient is trivially zero.
ModelGradientReport model_gradient_check(uint64_t seed, int64_t entries_per_tensor = 6, double h = 1e-5);

struct SuiteResult {
  std::string name;
  int64_t instances = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct VerifyReport {
  std::vector<SuiteResult> suites;
  bool all_passed() const;
};

/// Oracle equivalence sweeps (conv, warp, NCC, smoothness, label warp, Dice, components) and
/// finite-difference gradient checks of every differentiable op.
VerifyReport run_verify(uint64_t seed, int64_t instances = 50);

}  // namespace ernet::refcheck
