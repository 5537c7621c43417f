#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "ernet/refcheck.hpp"

namespace ernet::refcheck {

namespace {

int64_t at(Dims3 d, int64_t x, int64_t y, int64_t z) { return (x * d.y + y) * d.z + z; }

double voxel(double u, int64_t n) { return n == 1 ? u : (u + 1.0) * double(n - 1) / 2.0; }

}  // namespace

std::vector<double> naive_conv(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t pad, Dims3 in,
                               const std::vector<double>& input, const std::vector<double>& weight,
                               const std::vector<double>& bias) {
  const int64_t ox = (in.x + 2 * pad - k) / stride + 1;
  const int64_t oy = (in.y + 2 * pad - k) / stride + 1;
  const int64_t oz = (in.z + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<size_t>(cout * ox * oy * oz), 0.0);
  for (int64_t co = 0; co < cout; ++co)
    for (int64_t x = 0; x < ox; ++x)
      for (int64_t y = 0; y < oy; ++y)
        for (int64_t z = 0; z < oz; ++z) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t i = 0; i < k; ++i)
              for (int64_t j = 0; j < k; ++j)
                for (int64_t l = 0; l < k; ++l) {
                  const int64_t sx = x * stride + i - pad, sy = y * stride + j - pad, sz = z * stride + l - pad;
                  if (sx < 0 || sy < 0 || sz < 0 || sx >= in.x || sy >= in.y || sz >= in.z) continue;
                  acc += input[static_cast<size_t>(ci * in.count() + at(in, sx, sy, sz))] *
                         weight[static_cast<size_t>((((co * cin + ci) * k + i) * k + j) * k + l)];
                }
          out[static_cast<size_t>(((co * ox + x) * oy + y) * oz + z)] = acc;
        }
  return out;
}

std::array<double, 3> naive_map_voxel(Dims3 d, const std::array<double, 12>& a, double x, double y, double z) {
  const double p[4] = {d.x == 1 ? 0.0 : -1.0 + 2.0 * x / double(d.x - 1),
                       d.y == 1 ? 0.0 : -1.0 + 2.0 * y / double(d.y - 1),
                       d.z == 1 ? 0.0 : -1.0 + 2.0 * z / double(d.z - 1), 1.0};
  double q[3];
  for (int r = 0; r < 3; ++r) {
    q[r] = 0.0;
    for (int c = 0; c < 4; ++c) q[r] += a[static_cast<size_t>(4 * r + c)] * p[c];
  }
  return {voxel(q[0], d.x), voxel(q[1], d.y), voxel(q[2], d.z)};
}

std::vector<double> naive_warp(Dims3 d, const std::vector<double>& source, const std::array<double, 12>& a) {
  std::vector<double> out(source.size(), 0.0);
  for (int64_t x = 0; x < d.x; ++x)
    for (int64_t y = 0; y < d.y; ++y)
      for (int64_t z = 0; z < d.z; ++z) {
        const auto u = naive_map_voxel(d, a, double(x), double(y), double(z));
        double v = 0.0;
        for (int64_t o = 0; o < d.x; ++o)
          for (int64_t p = 0; p < d.y; ++p)
            for (int64_t q = 0; q < d.z; ++q) {
              v += source[static_cast<size_t>(at(d, o, p, q))] * std::max(0.0, 1.0 - std::abs(u[0] - double(o))) *
                   std::max(0.0, 1.0 - std::abs(u[1] - double(p))) * std::max(0.0, 1.0 - std::abs(u[2] - double(q)));
            }
        out[static_cast<size_t>(at(d, x, y, z))] = v;
      }
  return out;
}

std::vector<int32_t> naive_warp_labels(Dims3 d, const std::vector<int32_t>& labels, const std::array<double, 12>& a) {
  std::vector<int32_t> out(labels.size(), 0);
  for (int64_t x = 0; x < d.x; ++x)
    for (int64_t y = 0; y < d.y; ++y)
      for (int64_t z = 0; z < d.z; ++z) {
        const auto u = naive_map_voxel(d, a, double(x), double(y), double(z));
        const auto o = static_cast<int64_t>(std::floor(u[0] + 0.5));
        const auto p = static_cast<int64_t>(std::floor(u[1] + 0.5));
        const auto q = static_cast<int64_t>(std::floor(u[2] + 0.5));
        if (o < 0 || p < 0 || q < 0 || o >= d.x || p >= d.y || q >= d.z) continue;
        out[static_cast<size_t>(at(d, x, y, z))] = labels[static_cast<size_t>(at(d, o, p, q))];
      }
  return out;
}

double naive_ncc(Dims3 d, int64_t window, double eps, const std::vector<double>& a, const std::vector<double>& b) {
  const int64_t r = window / 2;
  double total = 0.0;
  for (int64_t x = 0; x < d.x; ++x)
    for (int64_t y = 0; y < d.y; ++y)
      for (int64_t z = 0; z < d.z; ++z) {
        // Windows are clipped to the grid.
        std::vector<size_t> cells;
        for (int64_t i = -r; i <= r; ++i)
          for (int64_t j = -r; j <= r; ++j)
            for (int64_t k = -r; k <= r; ++k) {
              const int64_t u = x + i, v = y + j, w = z + k;
              if (u < 0 || v < 0 || w < 0 || u >= d.x || v >= d.y || w >= d.z) continue;
              cells.push_back(static_cast<size_t>(at(d, u, v, w)));
            }
        double sa = 0, sb = 0;
        for (size_t c : cells) {
          sa += a[c];
          sb += b[c];
        }
        const double ma = sa / double(cells.size()), mb = sb / double(cells.size());
        double cross = 0, va = 0, vb = 0;
        for (size_t c : cells) {
          cross += (a[c] - ma) * (b[c] - mb);
          va += (a[c] - ma) * (a[c] - ma);
          vb += (b[c] - mb) * (b[c] - mb);
        }
        total += cross * cross / (va * vb + eps);
      }
  return -total / double(d.count());
}

double naive_smoothness(Dims3 d, const std::vector<double>& m) {
  double s = 0.0;
  for (int64_t x = 0; x < d.x; ++x)
    for (int64_t y = 0; y < d.y; ++y)
      for (int64_t z = 0; z < d.z; ++z) {
        const double c = m[static_cast<size_t>(at(d, x, y, z))];
        if (x + 1 < d.x) s += std::pow(m[static_cast<size_t>(at(d, x + 1, y, z))] - c, 2);
        if (y + 1 < d.y) s += std::pow(m[static_cast<size_t>(at(d, x, y + 1, z))] - c, 2);
        if (z + 1 < d.z) s += std::pow(m[static_cast<size_t>(at(d, x, y, z + 1))] - c, 2);
      }
  return s;
}

std::array<double, 3> naive_map_point(const std::array<double, 12>& a, const std::array<double, 3>& p) {
  return {a[0] * p[0] + a[1] * p[1] + a[2] * p[2] + a[3], a[4] * p[0] + a[5] * p[1] + a[6] * p[2] + a[7],
          a[8] * p[0] + a[9] * p[1] + a[10] * p[2] + a[11]};
}

double brute_dice(const std::vector<double>& a, const std::vector<double>& b) {
  std::set<size_t> sa, sb;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != 0.0) sa.insert(i);
  for (size_t i = 0; i < b.size(); ++i)
    if (b[i] != 0.0) sb.insert(i);
  if (sa.empty() && sb.empty()) return 1.0;
  std::vector<size_t> both;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(both));
  return 2.0 * double(both.size()) / double(sa.size() + sb.size());
}

double brute_label_dice(const std::vector<int32_t>& a, const std::vector<int32_t>& b) {
  std::set<int32_t> labels;
  for (auto l : a)
    if (l != 0) labels.insert(l);
  for (auto l : b)
    if (l != 0) labels.insert(l);
  if (labels.empty()) return 1.0;
  double acc = 0.0;
  for (int32_t l : labels) {
    std::vector<double> ma(a.size()), mb(b.size());
    for (size_t i = 0; i < a.size(); ++i) ma[i] = a[i] == l ? 1.0 : 0.0;
    for (size_t i = 0; i < b.size(); ++i) mb[i] = b[i] == l ? 1.0 : 0.0;
    acc += brute_dice(ma, mb);
  }
  return acc / double(labels.size());
}

int64_t union_find_components(Dims3 d, const std::vector<double>& mask) {
  std::vector<int64_t> parent(mask.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int64_t(int64_t)> find = [&](int64_t i) {
    while (parent[static_cast<size_t>(i)] != i) i = parent[static_cast<size_t>(i)] = parent[static_cast<size_t>(parent[static_cast<size_t>(i)])];
    return i;
  };
  auto unite = [&](int64_t i, int64_t j) { parent[static_cast<size_t>(find(i))] = find(j); };
  for (int64_t x = 0; x < d.x; ++x)
    for (int64_t y = 0; y < d.y; ++y)
      for (int64_t z = 0; z < d.z; ++z) {
        const int64_t i = at(d, x, y, z);
        if (mask[static_cast<size_t>(i)] == 0.0) continue;
        if (x + 1 < d.x && mask[static_cast<size_t>(at(d, x + 1, y, z))] != 0.0) unite(i, at(d, x + 1, y, z));
        if (y + 1 < d.y && mask[static_cast<size_t>(at(d, x, y + 1, z))] != 0.0) unite(i, at(d, x, y + 1, z));
        if (z + 1 < d.z && mask[static_cast<size_t>(at(d, x, y, z + 1))] != 0.0) unite(i, at(d, x, y, z + 1));
      }
  std::set<int64_t> roots;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0.0) roots.insert(find(static_cast<int64_t>(i)));
  return static_cast<int64_t>(roots.size());
}

std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                double h) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    x[i] = v + h;
    const double fp = f(x);
    x[i] = v - h;
    const double fm = f(x);
    x[i] = v;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  double scale = floor;
  for (double v : b) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / scale;
}

}  // namespace ernet::refcheck
