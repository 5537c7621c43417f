#include <cmath>
#include <stdexcept>

#include "ernet/ops.hpp"
#include "ernet/pipeline.hpp"

namespace ernet {

namespace {

template <typename T>
T get_key(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::string scale_name(RegularizerScale s) { return s == RegularizerScale::Sum ? "sum" : "voxel_mean"; }

}  // namespace

void ModelConfig::validate() const {
  if (extraction_stages < 0) throw ConfigError("config key 'extraction_stages': must be >= 0");
  if (registration_stages < 0) throw ConfigError("config key 'registration_stages': must be >= 0");
  if (!(gamma > 0.0)) throw ConfigError("config key 'gamma': must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("config key 'lambda': must be >= 0");
  if (ncc_window < 1 || ncc_window % 2 == 0) throw ConfigError("config key 'ncc_window': must be odd and positive");
  for (auto w : extraction_widths.filters)
    if (w < 1) throw ConfigError("config key 'extraction_widths': widths must be >= 1");
  for (auto w : registration_widths.filters)
    if (w < 1) throw ConfigError("config key 'registration_widths': widths must be >= 1");
  if (registration_widths.hidden < 1) throw ConfigError("config key 'registration_hidden': must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"extraction_stages", extraction_stages},
          {"registration_stages", registration_stages},
          {"gamma", gamma},
          {"lambda", lambda},
          {"ncc_window", ncc_window},
          {"extraction_widths", extraction_widths.filters},
          {"registration_widths", registration_widths.filters},
          {"registration_hidden", registration_widths.hidden},
          {"regularizer_scale", scale_name(regularizer_scale)},
          {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "extraction_stages") {
      c.extraction_stages = get_key<int64_t>(j, key);
    } else if (key == "registration_stages") {
      c.registration_stages = get_key<int64_t>(j, key);
    } else if (key == "stages") {
      const auto s = get_key<std::vector<int64_t>>(j, key);
      if (s.size() != 2) throw ConfigError("config key 'stages': expected [M, N]");
      c.extraction_stages = s[0];
      c.registration_stages = s[1];
    } else if (key == "gamma") {
      c.gamma = get_key<double>(j, key);
    } else if (key == "lambda") {
      c.lambda = get_key<double>(j, key);
    } else if (key == "ncc_window") {
      c.ncc_window = get_key<int64_t>(j, key);
    } else if (key == "extraction_widths") {
      c.extraction_widths.filters = get_key<std::array<int64_t, 10>>(j, key);
    } else if (key == "registration_widths") {
      c.registration_widths.filters = get_key<std::array<int64_t, 6>>(j, key);
    } else if (key == "registration_hidden") {
      c.registration_widths.hidden = get_key<int64_t>(j, key);
    } else if (key == "width_divisor") {
      const auto d = get_key<int64_t>(j, key);
      if (d < 1) throw ConfigError("config key 'width_divisor': must be >= 1");
      c.extraction_widths = ExtractionWidths::reduced(d);
      const int64_t hidden = c.registration_widths.hidden;
      c.registration_widths = RegistrationWidths::reduced(d);
      c.registration_widths.hidden = hidden;
    } else if (key == "regularizer_scale") {
      const auto s = get_key<std::string>(j, key);
      if (s == "sum") {
        c.regularizer_scale = RegularizerScale::Sum;
      } else if (s == "voxel_mean") {
        c.regularizer_scale = RegularizerScale::VoxelMean;
      } else {
        throw ConfigError("config key 'regularizer_scale': expected 'sum' or 'voxel_mean'");
      }
    } else if (key == "init_seed") {
      c.init_seed = get_key<uint64_t>(j, key);
    } else {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

namespace {

const ModelConfig& validated(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

ErnetModel::ErnetModel(const ModelConfig& config)
    : config_(validated(config)),
      extraction_([&] {
        Rng rng(config.init_seed);
        return ExtractionNet(config.extraction_widths, config.gamma, rng);
      }()),
      registration_([&] {
        Rng rng(config.init_seed + 0x9E3779B97F4A7C15ULL);
        return RegistrationNet(config.registration_widths, rng);
      }()) {}

std::vector<NamedTensor> ErnetModel::parameters() const {
  auto out = extraction_.parameters();
  for (auto& p : registration_.parameters()) out.push_back(std::move(p));
  return out;
}

std::vector<NamedTensor> ErnetModel::trainable_parameters() const {
  std::vector<NamedTensor> out;
  if (config_.extraction_stages > 0) out = extraction_.parameters();
  if (config_.registration_stages > 0)
    for (auto& p : registration_.parameters()) out.push_back(std::move(p));
  return out;
}

ForwardResult ErnetModel::forward(const Tensor& source, const Tensor& target, Mode mode) const {
  if (source.shape() != target.shape()) {
    throw ShapeError("forward: source " + shape_to_string(source.shape()) + " and target " +
                     shape_to_string(target.shape()) + " differ");
  }
  ForwardResult r;
  const auto dims = spatial_dims(source);
  if (source.dim(0) != 1) throw ShapeError("forward: expected single-channel volumes");
  Tensor e = source;
  if (config_.extraction_stages > 0) {
    r.extraction = run_extraction(extraction_, source, config_.extraction_stages, mode);
    e = r.extraction->output();
  }
  r.extracted = e;
  if (config_.registration_stages > 0) {
    r.registration = run_registration(registration_, e, target, config_.registration_stages, CoordinateFrame{dims});
    r.output = r.registration->output();
    r.transform = r.registration->transform();
  } else {
    r.output = e;
    r.transform = to_tensor(AffineTransform::identity());
  }
  if (config_.extraction_stages == 0 && config_.registration_stages == 0) {
    r.warnings.emplace_back("degenerate configuration: extraction and registration both disabled, output equals source");
  }
  if (mode == Mode::Train) {
    const std::vector<Tensor> masks = r.extraction ? r.extraction->masks : std::vector<Tensor>{};
    r.loss = total_loss(masks, r.output, target, config_.lambda, config_.ncc_window, config_.regularizer_scale);
  }
  return r;
}

ForwardResult ErnetModel::forward(const Volume& source, const Volume& target, Mode mode) const {
  return forward(to_tensor(source), to_tensor(target), mode);
}

void ErnetModel::save(const std::filesystem::path& path, nlohmann::json extra_meta) const {
  extra_meta["model"] = config_.to_json();
  write_checkpoint(path, parameters(), extra_meta);
}

ErnetModel ErnetModel::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (!ckpt.meta.contains("model")) throw CheckpointError("checkpoint lacks the model manifest: " + path.string());
  ErnetModel model(ModelConfig::from_json(ckpt.meta["model"]));
  auto params = model.parameters();
  load_parameters(params, ckpt);
  return model;
}

}  // namespace ernet
