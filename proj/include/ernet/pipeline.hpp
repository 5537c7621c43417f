// End-to-end model: extraction stages feeding registration stages, plus training,
// inference, evaluation and stage-count experiments.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ernet/checkpoint.hpp"
#include "ernet/extraction.hpp"
#include "ernet/objective.hpp"
#include "ernet/phantom.hpp"
#include "ernet/registration.hpp"

namespace ernet {

/// Raised for malformed configuration; the message names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int64_t extraction_stages = 5;    // M; 0 disables extraction
  int64_t registration_stages = 5;  // N; 0 disables registration
  double gamma = 10.0;
  double lambda = 1.0;
  int64_t ncc_window = kDefaultNccWindow;
  ExtractionWidths extraction_widths;
  RegistrationWidths registration_widths;
  RegularizerScale regularizer_scale = RegularizerScale::VoxelMean;
  uint64_t init_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  /// Keys absent from `j` keep the values already in `base`.
  static ModelConfig from_json(const nlohmann::json& j, ModelConfig base);
  static ModelConfig from_json(const nlohmann::json& j) { return from_json(j, ModelConfig()); }
};

struct ForwardResult {
  std::optional<ExtractionTrace> extraction;
  std::optional<RegistrationTrace> registration;
  Tensor extracted;  // E^M (S when M = 0)
  Tensor output;     // W^N (E^M when N = 0)
  Tensor transform;  // A_c^N (identity when N = 0)
  std::optional<LossBreakdown> loss;
  std::vector<std::string> warnings;
};

class ErnetModel {
 public:
  explicit ErnetModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ExtractionNet& extraction() { return extraction_; }
  const ExtractionNet& extraction() const { return extraction_; }
  RegistrationNet& registration() { return registration_; }
  const RegistrationNet& registration() const { return registration_; }

  /// Every parameter tensor (both networks).
  std::vector<NamedTensor> parameters() const;
  /// Parameters of the enabled modules only.
  std::vector<NamedTensor> trainable_parameters() const;

  /// Source and target are [1,W,H,D]. In train mode the loss is attached.
  ForwardResult forward(const Tensor& source, const Tensor& target, Mode mode) const;
  ForwardResult forward(const Volume& source, const Volume& target, Mode mode) const;

  void save(const std::filesystem::path& path, nlohmann::json extra_meta = nlohmann::json::object()) const;
  static ErnetModel load(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  ExtractionNet extraction_;
  RegistrationNet registration_;
};

struct TrainConfig {
  double learning_rate = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int64_t iterations = 2000;
  uint64_t seed = 0;
  AugmentationRanges augmentation;  // identity ranges disable augmentation
  int64_t validation_every = 100;   // 0 disables validation
  int64_t checkpoint_every = 0;     // 0: only the final state is saved
  double gradient_clip = 0.0;       // global gradient norm ceiling; 0 disables
  int64_t lr_decay_at = 0;          // from this iteration on the rate is multiplied by lr_decay_factor; 0 disables
  double lr_decay_factor = 0.1;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<std::filesystem::path> resume_from;
  bool verbose = false;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig()); }
};

struct TrainLogRow {
  int64_t iteration = 0;
  double similarity = 0.0;
  double regularizer_sum = 0.0;
  double total = 0.0;
  double gradient_norm = 0.0;  // before clipping
  std::optional<double> val_dice_ext, val_dice_reg;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  double best_validation = -1.0;
  int64_t best_iteration = 0;
  double seconds = 0.0;
};

/// Raised when the loss stops being finite; carries the iteration index.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(int64_t iteration, double value);
  int64_t iteration;
};

std::string to_csv(const std::vector<TrainLogRow>& log);

/// One pair per step. Writes train_log.csv, last.ckpt and best.ckpt under the checkpoint
/// directory when one is configured.
TrainResult train(ErnetModel& model, const std::vector<PairData>& train_set, const std::vector<PairData>& val_set,
                  const TrainConfig& config);

struct InferenceResult {
  Volume extracted;
  Volume mask;  // cumulative binary mask (all ones when M = 0)
  Volume warped;
  AffineTransform transform;
  std::vector<Volume> stage_masks;
  std::vector<Volume> stage_warps;
};

InferenceResult infer(const ErnetModel& model, const Volume& source, const Volume& target);
/// Writes extracted, mask, warped, mask_stage{j}, warp_stage{k} (.rvol) and the transform in both
/// conventions (transform_normalized.txt, transform_voxel.txt).
void write_inference(const InferenceResult& r, const std::filesystem::path& out_dir);

struct Evaluation {
  std::vector<MetricReport> reports;
  MetricSummary summary;
  std::vector<std::string> warnings;
};

Evaluation evaluate(const ErnetModel& model, const std::vector<PairData>& dataset);

/// Same metrics for any per-pair predictor (an oracle, for instance).
using PairPredictor = std::function<InferenceResult(const PairData&)>;
Evaluation evaluate(const PairPredictor& predictor, const std::vector<PairData>& dataset);

/// Phantom pairs with seeds first_seed, first_seed + 1, ...
std::vector<PairData> phantom_dataset(uint64_t first_seed, int64_t count, const Extents& extents,
                                      const AugmentationRanges& ranges);
/// Writes the pairs as .rvol files plus `manifest.json` under `dir`.
void write_dataset(const std::filesystem::path& dir, const std::vector<PairData>& pairs);

}  // namespace ernet
