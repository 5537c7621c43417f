#include "ernet/objective.hpp"

#include <cmath>
#include <deque>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ernet/ops.hpp"

namespace ernet {

namespace {

kernels::Dims3 volume_dims(const Tensor& x, const char* op) {
  if (x.rank() == 4 && x.dim(0) == 1) return {x.dim(1), x.dim(2), x.dim(3)};
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2)};
  throw ShapeError(std::string(op) + ": expected a single-channel volume, got " + shape_to_string(x.shape()));
}

void require_binary(const Volume& v, const char* op) {
  for (double x : v.values)
    if (x != 0.0 && x != 1.0) throw std::invalid_argument(std::string(op) + ": mask must be binary {0,1}");
}

}  // namespace

Tensor ncc_loss(const Tensor& warped, const Tensor& target, int64_t window) {
  if (window < 1 || window % 2 == 0) {
    throw std::invalid_argument("ncc_loss: window must be odd and positive, got " + std::to_string(window));
  }
  require_same_shape(warped, target, "ncc_loss");
  const auto dims = volume_dims(warped, "ncc_loss");
  const double value = kernels::ncc_forward(dims, window, kNccEps, warped.values(), target.values());
  Tensor out = Tensor::scalar(value);
  if (!should_record({&warped, &target})) return out;
  out.set_requires_grad(true);
  Tape::active()->record([out, warped, target, dims, window]() mutable {
    if (!out.has_grad()) return;
    std::span<double> ga = warped.requires_grad() ? warped.grad_buffer() : std::span<double>{};
    std::span<double> gb = target.requires_grad() ? target.grad_buffer() : std::span<double>{};
    kernels::ncc_backward(dims, window, kNccEps, warped.values(), target.values(), out.grad()[0], ga, gb);
  });
  return out;
}

Tensor mask_smoothness(const Tensor& mask) {
  const auto dims = volume_dims(mask, "mask_smoothness");
  Tensor out = Tensor::scalar(kernels::smoothness_forward(dims, mask.values()));
  if (!should_record({&mask})) return out;
  out.set_requires_grad(true);
  Tape::active()->record([out, mask, dims]() mutable {
    if (!out.has_grad()) return;
    kernels::smoothness_backward(dims, mask.values(), out.grad()[0], mask.grad_buffer());
  });
  return out;
}

double LossBreakdown::regularizer_sum() const {
  double s = 0.0;
  for (double r : regularizer_per_stage) s += r;
  return s;
}

LossBreakdown total_loss(const std::vector<Tensor>& masks, const Tensor& w_final, const Tensor& target, double lambda,
                         int64_t window, RegularizerScale scale) {
  LossBreakdown out;
  out.lambda = lambda;
  Tensor total = ncc_loss(w_final, target, window);
  out.similarity = total.item();
  for (const Tensor& m : masks) {
    Tensor r = mask_smoothness(m);
    if (scale == RegularizerScale::VoxelMean) r = elementwise(ElementwiseKind::Mul, r, 1.0 / static_cast<double>(m.numel()));
    out.regularizer_per_stage.push_back(r.item());
    total = add(total, elementwise(ElementwiseKind::Mul, r, lambda));
  }
  out.total = total.item();
  out.total_tensor = total;
  return out;
}

double dice_ext(const Volume& predicted, const Volume& truth) {
  if (predicted.extents != truth.extents) throw ShapeError("dice_ext: extents differ");
  require_binary(predicted, "dice_ext");
  require_binary(truth, "dice_ext");
  int64_t a = 0, b = 0, both = 0;
  for (size_t i = 0; i < predicted.values.size(); ++i) {
    const bool pa = predicted.values[i] != 0.0;
    const bool pb = truth.values[i] != 0.0;
    a += pa;
    b += pb;
    both += pa && pb;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

DiceRegResult label_dice(const LabelVolume& a, const LabelVolume& b) {
  if (a.extents != b.extents) throw ShapeError("label_dice: extents differ");
  std::map<int32_t, std::array<int64_t, 3>> counts;  // |A|, |B|, |A n B|
  for (size_t i = 0; i < a.labels.size(); ++i) {
    const int32_t la = a.labels[i];
    const int32_t lb = b.labels[i];
    if (la != 0) counts[la][0]++;
    if (lb != 0) counts[lb][1]++;
    if (la != 0 && la == lb) counts[la][2]++;
  }
  DiceRegResult r;
  if (counts.empty()) return r;
  double acc = 0.0;
  for (const auto& [label, c] : counts) {
    const double d = 2.0 * static_cast<double>(c[2]) / static_cast<double>(c[0] + c[1]);
    r.per_label.emplace_back(label, d);
    acc += d;
  }
  r.mean = acc / static_cast<double>(counts.size());
  return r;
}

DiceRegResult dice_reg(const LabelVolume& seg_source, const LabelVolume& seg_target, const AffineTransform& t,
                       const CoordinateFrame& frame) {
  return label_dice(warp_labels(seg_source, t, frame), seg_target);
}

int64_t count_components(const Volume& mask) {
  require_binary(mask, "count_components");
  const Extents e = mask.extents;
  std::vector<uint8_t> seen(mask.values.size(), 0);
  std::deque<std::array<int64_t, 3>> queue;
  int64_t components = 0;
  for (int64_t x = 0; x < e.x; ++x)
    for (int64_t y = 0; y < e.y; ++y)
      for (int64_t z = 0; z < e.z; ++z) {
        const auto start = static_cast<size_t>(mask.index(x, y, z));
        if (mask.values[start] == 0.0 || seen[start]) continue;
        ++components;
        seen[start] = 1;
        queue.push_back({x, y, z});
        while (!queue.empty()) {
          const auto [cx, cy, cz] = queue.front();
          queue.pop_front();
          const int64_t nb[6][3] = {{cx - 1, cy, cz}, {cx + 1, cy, cz}, {cx, cy - 1, cz},
                                    {cx, cy + 1, cz}, {cx, cy, cz - 1}, {cx, cy, cz + 1}};
          for (const auto& n : nb) {
            if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= e.x || n[1] >= e.y || n[2] >= e.z) continue;
            const auto i = static_cast<size_t>(mask.index(n[0], n[1], n[2]));
            if (mask.values[i] == 0.0 || seen[i]) continue;
            seen[i] = 1;
            queue.push_back({n[0], n[1], n[2]});
          }
        }
      }
  return components;
}

double mean_gradient_magnitude(const Volume& v) {
  const Extents e = v.extents;
  double total = 0.0;
  int64_t n = 0;
  for (int64_t x = 1; x + 1 < e.x; ++x)
    for (int64_t y = 1; y + 1 < e.y; ++y)
      for (int64_t z = 1; z + 1 < e.z; ++z) {
        const double gx = 0.5 * (v.at(x + 1, y, z) - v.at(x - 1, y, z));
        const double gy = 0.5 * (v.at(x, y + 1, z) - v.at(x, y - 1, z));
        const double gz = 0.5 * (v.at(x, y, z + 1) - v.at(x, y, z - 1));
        total += std::sqrt(gx * gx + gy * gy + gz * gz);
        ++n;
      }
  return n > 0 ? total / static_cast<double>(n) : 0.0;
}

MetricSummary summarize(const std::vector<MetricReport>& reports) {
  MetricSummary s;
  s.count = static_cast<int64_t>(reports.size());
  if (reports.empty()) return s;
  auto stats = [&](auto field, double& mean, double& sd) {
    double acc = 0.0;
    for (const auto& r : reports) acc += field(r);
    mean = acc / static_cast<double>(reports.size());
    double var = 0.0;
    for (const auto& r : reports) var += (field(r) - mean) * (field(r) - mean);
    sd = std::sqrt(var / static_cast<double>(reports.size()));
  };
  stats([](const MetricReport& r) { return r.dice_ext; }, s.dice_ext_mean, s.dice_ext_std);
  stats([](const MetricReport& r) { return r.dice_reg; }, s.dice_reg_mean, s.dice_reg_std);
  stats([](const MetricReport& r) { return r.translation_error; }, s.translation_error_mean, s.translation_error_std);
  return s;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["dice_ext"] = r.dice_ext;
  j["dice_reg"] = r.dice_reg;
  j["per_label"] = nlohmann::json::array();
  for (const auto& [label, d] : r.per_label) j["per_label"].push_back({{"label", label}, {"dice", d}});
  j["component_count"] = r.component_count;
  j["translation_error"] = r.translation_error;
  if (r.loss) {
    j["loss"] = {{"similarity", r.loss->similarity},
                 {"regularizer_per_stage", r.loss->regularizer_per_stage},
                 {"lambda", r.loss->lambda},
                 {"total", r.loss->total}};
  }
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
  return j;
}

nlohmann::json to_json(const MetricSummary& s) {
  return {{"count", s.count},
          {"dice_ext", {{"mean", s.dice_ext_mean}, {"std", s.dice_ext_std}}},
          {"dice_reg", {{"mean", s.dice_reg_mean}, {"std", s.dice_reg_std}}},
          {"translation_error", {{"mean", s.translation_error_mean}, {"std", s.translation_error_std}}}};
}

std::string to_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "name,dice_ext,dice_reg,component_count,translation_error,similarity,regularizer_sum,total\n";
  for (const auto& r : reports) {
    os << r.name << ',' << r.dice_ext << ',' << r.dice_reg << ',' << r.component_count << ',' << r.translation_error;
    if (r.loss) {
      os << ',' << r.loss->similarity << ',' << r.loss->regularizer_sum() << ',' << r.loss->total;
    } else {
      os << ",,,";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace ernet
