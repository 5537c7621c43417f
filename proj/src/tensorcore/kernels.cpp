#include "ernet/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ernet::kernels {

namespace {

int g_threads = 0;

struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit g_blas_init;

int team_size() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int thread_id() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

inline int64_t idx3(const Dims3& d, int64_t x, int64_t y, int64_t z) { return (x * d.y + y) * d.z + z; }

// Fills the im2col matrix [Cin*k^3, out.y*out.z] for output plane `xo`.
void im2col_plane(const ConvGeometry& g, std::span<const double> input, int64_t xo, std::vector<double>& col) {
  const Dims3 out = g.out();
  const int64_t k = g.kernel;
  const int64_t plane = out.y * out.z;
  const int64_t in_count = g.in.count();
  for (int64_t ci = 0; ci < g.in_channels; ++ci) {
    const double* src = input.data() + ci * in_count;
    for (int64_t kx = 0; kx < k; ++kx) {
      const int64_t xi = xo * g.stride - g.padding + kx;
      for (int64_t ky = 0; ky < k; ++ky) {
        for (int64_t kz = 0; kz < k; ++kz) {
          double* row = col.data() + (((ci * k + kx) * k + ky) * k + kz) * plane;
          if (xi < 0 || xi >= g.in.x) {
            std::fill(row, row + plane, 0.0);
            continue;
          }
          for (int64_t yo = 0; yo < out.y; ++yo) {
            const int64_t yi = yo * g.stride - g.padding + ky;
            double* dst = row + yo * out.z;
            if (yi < 0 || yi >= g.in.y) {
              std::fill(dst, dst + out.z, 0.0);
              continue;
            }
            const double* line = src + (xi * g.in.y + yi) * g.in.z;
            if (g.stride == 1) {
              for (int64_t zo = 0; zo < out.z; ++zo) {
                const int64_t zi = zo - g.padding + kz;
                dst[zo] = (zi >= 0 && zi < g.in.z) ? line[zi] : 0.0;
              }
            } else {
              for (int64_t zo = 0; zo < out.z; ++zo) {
                const int64_t zi = zo * g.stride - g.padding + kz;
                dst[zo] = (zi >= 0 && zi < g.in.z) ? line[zi] : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

void col2im_plane(const ConvGeometry& g, const std::vector<double>& col, int64_t xo, double* grad_input) {
  const Dims3 out = g.out();
  const int64_t k = g.kernel;
  const int64_t plane = out.y * out.z;
  const int64_t in_count = g.in.count();
  for (int64_t ci = 0; ci < g.in_channels; ++ci) {
    double* dst_base = grad_input + ci * in_count;
    for (int64_t kx = 0; kx < k; ++kx) {
      const int64_t xi = xo * g.stride - g.padding + kx;
      if (xi < 0 || xi >= g.in.x) continue;
      for (int64_t ky = 0; ky < k; ++ky) {
        for (int64_t kz = 0; kz < k; ++kz) {
          const double* row = col.data() + (((ci * k + kx) * k + ky) * k + kz) * plane;
          for (int64_t yo = 0; yo < out.y; ++yo) {
            const int64_t yi = yo * g.stride - g.padding + ky;
            if (yi < 0 || yi >= g.in.y) continue;
            double* line = dst_base + (xi * g.in.y + yi) * g.in.z;
            const double* src = row + yo * out.z;
            for (int64_t zo = 0; zo < out.z; ++zo) {
              const int64_t zi = zo * g.stride - g.padding + kz;
              if (zi >= 0 && zi < g.in.z) line[zi] += src[zo];
            }
          }
        }
      }
    }
  }
}

inline double axis_scale(int64_t n) { return n > 1 ? 2.0 / static_cast<double>(n - 1) : 1.0; }
inline double to_normalized(int64_t i, int64_t n) { return n > 1 ? static_cast<double>(i) * axis_scale(n) - 1.0 : 0.0; }
// Coordinates within roundoff of a grid point snap onto it.
inline double to_voxel(double u, int64_t n) {
  const double v = n > 1 ? (u + 1.0) / axis_scale(n) : u;
  const double r = std::nearbyint(v);
  return std::abs(v - r) < 1e-12 ? r : v;
}

// Cubic box sum along one axis using a running window.
void box_axis(Dims3 d, int64_t r, int axis, const double* in, double* out) {
  const int64_t n = axis == 0 ? d.x : (axis == 1 ? d.y : d.z);
  const int64_t stride = axis == 0 ? d.y * d.z : (axis == 1 ? d.z : 1);
  const int64_t lines = d.count() / n;
#pragma omp parallel for schedule(static)
  for (int64_t line = 0; line < lines; ++line) {
    int64_t base;
    if (axis == 0) {
      base = line;  // (y, z) flattened
    } else if (axis == 1) {
      base = (line / d.z) * d.y * d.z + (line % d.z);
    } else {
      base = line * d.z;
    }
    double acc = 0.0;
    for (int64_t i = 0; i <= std::min(r, n - 1); ++i) acc += in[base + i * stride];
    for (int64_t i = 0; i < n; ++i) {
      out[base + i * stride] = acc;
      const int64_t add = i + r + 1;
      const int64_t drop = i - r;
      if (add < n) acc += in[base + add * stride];
      if (drop >= 0) acc -= in[base + drop * stride];
    }
  }
}

struct NccSums {
  std::vector<double> a, b, aa, bb, ab;
  std::vector<double> count;  // in-grid voxels per window
};

int64_t clipped_extent(int64_t i, int64_t n, int64_t r) { return std::min(i + r, n - 1) - std::max(i - r, int64_t(0)) + 1; }

NccSums ncc_sums(Dims3 dims, int64_t window, std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<size_t>(dims.count());
  std::vector<double> aa(n), bb(n), ab(n);
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  NccSums s;
  s.a.resize(n);
  s.b.resize(n);
  s.aa.resize(n);
  s.bb.resize(n);
  s.ab.resize(n);
  box_sum(dims, window, a, s.a);
  box_sum(dims, window, b, s.b);
  box_sum(dims, window, aa, s.aa);
  box_sum(dims, window, bb, s.bb);
  box_sum(dims, window, ab, s.ab);
  const int64_t r = window / 2;
  s.count.resize(n);
  for (int64_t x = 0; x < dims.x; ++x)
    for (int64_t y = 0; y < dims.y; ++y)
      for (int64_t z = 0; z < dims.z; ++z)
        s.count[idx3(dims, x, y, z)] =
            double(clipped_extent(x, dims.x, r) * clipped_extent(y, dims.y, r) * clipped_extent(z, dims.z, r));
  return s;
}

}  // namespace

Dims3 ConvGeometry::out() const {
  auto ext = [&](int64_t n) { return (n + 2 * padding - kernel) / stride + 1; };
  return {ext(in.x), ext(in.y), ext(in.z)};
}

void set_num_threads(int threads) {
  g_threads = threads;
  openblas_set_num_threads(1);
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif
}

int num_threads() { return g_threads > 0 ? g_threads : team_size(); }

void conv3d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
  const Dims3 out = g.out();
  const int64_t plane = out.y * out.z;
  const int64_t rows = g.in_channels * g.kernel * g.kernel * g.kernel;
  const int64_t out_count = out.count();
#pragma omp parallel
  {
    std::vector<double> col(static_cast<size_t>(rows * plane));
#pragma omp for schedule(static)
    for (int64_t xo = 0; xo < out.x; ++xo) {
      im2col_plane(g, input, xo, col);
      double* dst = output.data() + xo * plane;
      for (int64_t co = 0; co < g.out_channels; ++co) {
        const double b = bias.empty() ? 0.0 : bias[co];
        std::fill(dst + co * out_count, dst + co * out_count + plane, b);
      }
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(g.out_channels),
                  static_cast<int>(plane), static_cast<int>(rows), 1.0, weight.data(), static_cast<int>(rows),
                  col.data(), static_cast<int>(plane), 1.0, dst, static_cast<int>(out_count));
    }
  }
}

void conv3d_backward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                     std::span<const double> grad_output, std::span<double> grad_input,
                     std::span<double> grad_weight, std::span<double> grad_bias) {
  const Dims3 out = g.out();
  const int64_t plane = out.y * out.z;
  const int64_t rows = g.in_channels * g.kernel * g.kernel * g.kernel;
  const int64_t out_count = out.count();

  if (!grad_bias.empty()) {
    for (int64_t co = 0; co < g.out_channels; ++co) {
      double acc = 0.0;
      const double* src = grad_output.data() + co * out_count;
#pragma omp parallel for reduction(+ : acc) schedule(static)
      for (int64_t i = 0; i < out_count; ++i) acc += src[i];
      grad_bias[co] += acc;
    }
  }
  if (grad_input.empty() && grad_weight.empty()) return;

  const int teams = team_size();
  std::vector<std::vector<double>> weight_partials(static_cast<size_t>(teams));
  std::vector<std::vector<double>> input_partials(static_cast<size_t>(teams > 1 ? teams : 0));

#pragma omp parallel
  {
    const int tid = thread_id();
    std::vector<double> col(static_cast<size_t>(rows * plane));
    std::vector<double> dcol;
    if (!grad_input.empty()) dcol.resize(col.size());
    std::vector<double>& dw = weight_partials[static_cast<size_t>(tid)];
    if (!grad_weight.empty()) dw.assign(grad_weight.size(), 0.0);
    double* gin = nullptr;
    if (!grad_input.empty()) {
      if (teams > 1) {
        input_partials[static_cast<size_t>(tid)].assign(grad_input.size(), 0.0);
        gin = input_partials[static_cast<size_t>(tid)].data();
      } else {
        gin = grad_input.data();
      }
    }
#pragma omp for schedule(static)
    for (int64_t xo = 0; xo < out.x; ++xo) {
      const double* gout = grad_output.data() + xo * plane;
      if (!grad_weight.empty()) {
        im2col_plane(g, input, xo, col);
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(g.out_channels),
                    static_cast<int>(rows), static_cast<int>(plane), 1.0, gout, static_cast<int>(out_count),
                    col.data(), static_cast<int>(plane), 1.0, dw.data(), static_cast<int>(rows));
      }
      if (gin != nullptr) {
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(rows), static_cast<int>(plane),
                    static_cast<int>(g.out_channels), 1.0, weight.data(), static_cast<int>(rows), gout,
                    static_cast<int>(out_count), 0.0, dcol.data(), static_cast<int>(plane));
        col2im_plane(g, dcol, xo, gin);
      }
    }
  }
  if (!grad_weight.empty()) {
    for (const auto& dw : weight_partials)
      for (size_t i = 0; i < dw.size(); ++i) grad_weight[i] += dw[i];
  }
  for (const auto& gi : input_partials)
    for (size_t i = 0; i < gi.size(); ++i) grad_input[i] += gi[i];
}

void warp_forward(Dims3 d, std::span<const double> source, const std::array<double, 12>& a,
                  std::span<double> output) {
#pragma omp parallel for schedule(static)
  for (int64_t x = 0; x < d.x; ++x) {
    const double px = to_normalized(x, d.x);
    for (int64_t y = 0; y < d.y; ++y) {
      const double py = to_normalized(y, d.y);
      for (int64_t z = 0; z < d.z; ++z) {
        const double pz = to_normalized(z, d.z);
        const double ux = to_voxel(a[0] * px + a[1] * py + a[2] * pz + a[3], d.x);
        const double uy = to_voxel(a[4] * px + a[5] * py + a[6] * pz + a[7], d.y);
        const double uz = to_voxel(a[8] * px + a[9] * py + a[10] * pz + a[11], d.z);
        const double fx0 = std::floor(ux), fy0 = std::floor(uy), fz0 = std::floor(uz);
        const auto x0 = static_cast<int64_t>(fx0), y0 = static_cast<int64_t>(fy0), z0 = static_cast<int64_t>(fz0);
        const double tx = ux - fx0, ty = uy - fy0, tz = uz - fz0;
        const double wx[2] = {1.0 - tx, tx}, wy[2] = {1.0 - ty, ty}, wz[2] = {1.0 - tz, tz};
        double v = 0.0;
        for (int i = 0; i < 2; ++i) {
          const int64_t xi = x0 + i;
          if (xi < 0 || xi >= d.x) continue;
          for (int j = 0; j < 2; ++j) {
            const int64_t yi = y0 + j;
            if (yi < 0 || yi >= d.y) continue;
            for (int k = 0; k < 2; ++k) {
              const int64_t zi = z0 + k;
              if (zi < 0 || zi >= d.z) continue;
              v += source[idx3(d, xi, yi, zi)] * wx[i] * wy[j] * wz[k];
            }
          }
        }
        output[idx3(d, x, y, z)] = v;
      }
    }
  }
}

void warp_backward(Dims3 d, std::span<const double> source, const std::array<double, 12>& a,
                   std::span<const double> grad_output, std::span<double> grad_source,
                   std::array<double, 12>* grad_affine) {
  const int teams = team_size();
  std::vector<std::vector<double>> partials(static_cast<size_t>(teams > 1 && !grad_source.empty() ? teams : 0));
  double ga[12] = {0};
  const double inv_sx = 1.0 / axis_scale(d.x), inv_sy = 1.0 / axis_scale(d.y), inv_sz = 1.0 / axis_scale(d.z);

#pragma omp parallel reduction(+ : ga[:12])
  {
    double* gsrc = nullptr;
    if (!grad_source.empty()) {
      if (teams > 1) {
        auto& p = partials[static_cast<size_t>(thread_id())];
        p.assign(grad_source.size(), 0.0);
        gsrc = p.data();
      } else {
        gsrc = grad_source.data();
      }
    }
#pragma omp for schedule(static)
    for (int64_t x = 0; x < d.x; ++x) {
      const double px = to_normalized(x, d.x);
      for (int64_t y = 0; y < d.y; ++y) {
        const double py = to_normalized(y, d.y);
        for (int64_t z = 0; z < d.z; ++z) {
          const double g = grad_output[idx3(d, x, y, z)];
          if (g == 0.0) continue;
          const double pz = to_normalized(z, d.z);
          const double ux = to_voxel(a[0] * px + a[1] * py + a[2] * pz + a[3], d.x);
          const double uy = to_voxel(a[4] * px + a[5] * py + a[6] * pz + a[7], d.y);
          const double uz = to_voxel(a[8] * px + a[9] * py + a[10] * pz + a[11], d.z);
          const double fx0 = std::floor(ux), fy0 = std::floor(uy), fz0 = std::floor(uz);
          const auto x0 = static_cast<int64_t>(fx0), y0 = static_cast<int64_t>(fy0), z0 = static_cast<int64_t>(fz0);
          const double tx = ux - fx0, ty = uy - fy0, tz = uz - fz0;
          const double wx[2] = {1.0 - tx, tx}, wy[2] = {1.0 - ty, ty}, wz[2] = {1.0 - tz, tz};
          const double dw[2] = {-1.0, 1.0};
          double dux = 0.0, duy = 0.0, duz = 0.0;
          for (int i = 0; i < 2; ++i) {
            const int64_t xi = x0 + i;
            if (xi < 0 || xi >= d.x) continue;
            for (int j = 0; j < 2; ++j) {
              const int64_t yi = y0 + j;
              if (yi < 0 || yi >= d.y) continue;
              for (int k = 0; k < 2; ++k) {
                const int64_t zi = z0 + k;
                if (zi < 0 || zi >= d.z) continue;
                const int64_t s = idx3(d, xi, yi, zi);
                if (gsrc) gsrc[s] += g * wx[i] * wy[j] * wz[k];
                const double v = source[s];
                dux += v * dw[i] * wy[j] * wz[k];
                duy += v * wx[i] * dw[j] * wz[k];
                duz += v * wx[i] * wy[j] * dw[k];
              }
            }
          }
          const double gx = g * dux * inv_sx, gy = g * duy * inv_sy, gz = g * duz * inv_sz;
          ga[0] += gx * px;
          ga[1] += gx * py;
          ga[2] += gx * pz;
          ga[3] += gx;
          ga[4] += gy * px;
          ga[5] += gy * py;
          ga[6] += gy * pz;
          ga[7] += gy;
          ga[8] += gz * px;
          ga[9] += gz * py;
          ga[10] += gz * pz;
          ga[11] += gz;
        }
      }
    }
  }
  for (const auto& p : partials)
    for (size_t i = 0; i < p.size(); ++i) grad_source[i] += p[i];
  if (grad_affine)
    for (int i = 0; i < 12; ++i) (*grad_affine)[static_cast<size_t>(i)] += ga[i];
}

void box_sum(Dims3 dims, int64_t window, std::span<const double> input, std::span<double> output) {
  const int64_t r = window / 2;
  std::vector<double> tmp(input.size());
  box_axis(dims, r, 0, input.data(), output.data());
  box_axis(dims, r, 1, output.data(), tmp.data());
  box_axis(dims, r, 2, tmp.data(), output.data());
}

double ncc_forward(Dims3 dims, int64_t window, double eps, std::span<const double> a, std::span<const double> b) {
  const NccSums s = ncc_sums(dims, window, a, b);
  const auto count = static_cast<int64_t>(a.size());
  double total = 0.0;
#pragma omp parallel for reduction(+ : total) schedule(static)
  for (int64_t i = 0; i < count; ++i) {
    const double n = s.count[i];
    const double cross = s.ab[i] - s.a[i] * s.b[i] / n;
    const double va = s.aa[i] - s.a[i] * s.a[i] / n;
    const double vb = s.bb[i] - s.b[i] * s.b[i] / n;
    total += cross * cross / (va * vb + eps);
  }
  return -total / static_cast<double>(count);
}

void ncc_backward(Dims3 dims, int64_t window, double eps, std::span<const double> a, std::span<const double> b,
                  double grad_loss, std::span<double> grad_a, std::span<double> grad_b) {
  const NccSums s = ncc_sums(dims, window, a, b);
  const auto count = static_cast<size_t>(a.size());
  const double scale = -grad_loss / static_cast<double>(count);
  // d(loss)/d(window sums) at every window centre.
  std::vector<double> d_a(count), d_b(count), d_aa(count), d_bb(count), d_ab(count);
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < count; ++i) {
    const double n = s.count[i];
    const double cross = s.ab[i] - s.a[i] * s.b[i] / n;
    const double va = s.aa[i] - s.a[i] * s.a[i] / n;
    const double vb = s.bb[i] - s.b[i] * s.b[i] / n;
    const double den = va * vb + eps;
    const double c2 = cross * cross / (den * den);
    d_ab[i] = scale * 2.0 * cross / den;
    d_aa[i] = -scale * c2 * vb;
    d_bb[i] = -scale * c2 * va;
    d_a[i] = scale * (-2.0 * cross * s.b[i] / (n * den) + c2 * vb * 2.0 * s.a[i] / n);
    d_b[i] = scale * (-2.0 * cross * s.a[i] / (n * den) + c2 * va * 2.0 * s.b[i] / n);
  }
  std::vector<double> ba(count), bb(count), baa(count), bbb(count), bab(count);
  box_sum(dims, window, d_a, ba);
  box_sum(dims, window, d_b, bb);
  box_sum(dims, window, d_aa, baa);
  box_sum(dims, window, d_bb, bbb);
  box_sum(dims, window, d_ab, bab);
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < count; ++i) {
    if (!grad_a.empty()) grad_a[i] += ba[i] + 2.0 * a[i] * baa[i] + b[i] * bab[i];
    if (!grad_b.empty()) grad_b[i] += bb[i] + 2.0 * b[i] * bbb[i] + a[i] * bab[i];
  }
}

double smoothness_forward(Dims3 d, std::span<const double> m) {
  double total = 0.0;
#pragma omp parallel for reduction(+ : total) schedule(static)
  for (int64_t x = 0; x < d.x; ++x) {
    for (int64_t y = 0; y < d.y; ++y) {
      for (int64_t z = 0; z < d.z; ++z) {
        const double v = m[idx3(d, x, y, z)];
        if (x + 1 < d.x) {
          const double t = m[idx3(d, x + 1, y, z)] - v;
          total += t * t;
        }
        if (y + 1 < d.y) {
          const double t = m[idx3(d, x, y + 1, z)] - v;
          total += t * t;
        }
        if (z + 1 < d.z) {
          const double t = m[idx3(d, x, y, z + 1)] - v;
          total += t * t;
        }
      }
    }
  }
  return total;
}

void smoothness_backward(Dims3 d, std::span<const double> m, double grad_out, std::span<double> grad_mask) {
  // Each voxel gathers from its own forward differences and its predecessors'.
#pragma omp parallel for schedule(static)
  for (int64_t x = 0; x < d.x; ++x) {
    for (int64_t y = 0; y < d.y; ++y) {
      for (int64_t z = 0; z < d.z; ++z) {
        const int64_t i = idx3(d, x, y, z);
        const double v = m[i];
        double g = 0.0;
        if (x + 1 < d.x) g -= 2.0 * (m[idx3(d, x + 1, y, z)] - v);
        if (y + 1 < d.y) g -= 2.0 * (m[idx3(d, x, y + 1, z)] - v);
        if (z + 1 < d.z) g -= 2.0 * (m[idx3(d, x, y, z + 1)] - v);
        if (x > 0) g += 2.0 * (v - m[idx3(d, x - 1, y, z)]);
        if (y > 0) g += 2.0 * (v - m[idx3(d, x, y - 1, z)]);
        if (z > 0) g += 2.0 * (v - m[idx3(d, x, y, z - 1)]);
        grad_mask[i] += grad_out * g;
      }
    }
  }
}

}  // namespace ernet::kernels
