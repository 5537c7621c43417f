// Training loss (negative local cross-correlation plus mask smoothness) and the
// evaluation metrics: mask Dice, label Dice after warping, connected components.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ernet/geometry.hpp"
#include "ernet/tensor.hpp"
#include "ernet/volume.hpp"

namespace ernet {

inline constexpr int64_t kDefaultNccWindow = 9;
inline constexpr double kNccEps = 1e-5;

/// -mean over voxels of squared windowed correlation between two [1,W,H,D] volumes.
/// Windows are clipped at the grid boundary. Range [-1, 0]. Throws std::invalid_argument for an even window.
Tensor ncc_loss(const Tensor& warped, const Tensor& target, int64_t window = kDefaultNccWindow);

/// Sum of squared forward differences of a [1,W,H,D] (or [W,H,D]) mask.
Tensor mask_smoothness(const Tensor& mask);

/// How the per-stage smoothness sum enters the total loss. `VoxelMean` divides by the
/// voxel count so the term is on the same per-voxel scale as the similarity.
enum class RegularizerScale { Sum, VoxelMean };

struct LossBreakdown {
  double similarity = 0.0;
  std::vector<double> regularizer_per_stage;  // already scaled
  double lambda = 1.0;
  double total = 0.0;
  Tensor total_tensor;  // differentiable root when produced on a tape

  double regularizer_sum() const;
};

LossBreakdown total_loss(const std::vector<Tensor>& masks, const Tensor& w_final, const Tensor& target, double lambda,
                         int64_t window = kDefaultNccWindow, RegularizerScale scale = RegularizerScale::VoxelMean);

/// 2|A n B| / (|A| + |B|); 1 when both are empty. Throws on non-binary input.
double dice_ext(const Volume& predicted, const Volume& truth);

struct DiceRegResult {
  double mean = 1.0;
  std::vector<std::pair<int32_t, double>> per_label;
};

/// Warps `seg_source` by `t` (nearest neighbour) and averages per-label Dice against
/// `seg_target` over labels present in either (label 0 excluded).
DiceRegResult dice_reg(const LabelVolume& seg_source, const LabelVolume& seg_target, const AffineTransform& t,
                       const CoordinateFrame& frame);
DiceRegResult label_dice(const LabelVolume& a, const LabelVolume& b);

/// 6-connected foreground components (BFS). Throws on non-binary input.
int64_t count_components(const Volume& mask);

/// Mean central-difference gradient magnitude over interior voxels (a sharpness measure).
double mean_gradient_magnitude(const Volume& v);

struct MetricReport {
  std::string name;
  double dice_ext = 0.0;
  double dice_reg = 0.0;
  std::vector<std::pair<int32_t, double>> per_label;
  int64_t component_count = 0;
  double translation_error = 0.0;
  std::optional<LossBreakdown> loss;
  std::vector<std::string> warnings;
};

struct MetricSummary {
  int64_t count = 0;
  double dice_ext_mean = 0.0, dice_ext_std = 0.0;
  double dice_reg_mean = 0.0, dice_reg_std = 0.0;
  double translation_error_mean = 0.0, translation_error_std = 0.0;
};

/// Arithmetic mean and population standard deviation.
MetricSummary summarize(const std::vector<MetricReport>& reports);

nlohmann::json to_json(const MetricReport& r);
nlohmann::json to_json(const MetricSummary& s);
/// Header plus one row per report.
std::string to_csv(const std::vector<MetricReport>& reports);

}  // namespace ernet
