#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "ernet/io.hpp"
#include "ernet/pipeline.hpp"

namespace ernet {

namespace fs = std::filesystem;

namespace {

template <typename T>
T get_key(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

nlohmann::json row_to_json(const TrainLogRow& r) {
  nlohmann::json j = {{"iteration", r.iteration}, {"similarity", r.similarity},
                      {"regularizer_sum", r.regularizer_sum}, {"total", r.total},
                      {"gradient_norm", r.gradient_norm}};
  if (r.val_dice_ext) j["val_dice_ext"] = *r.val_dice_ext;
  if (r.val_dice_reg) j["val_dice_reg"] = *r.val_dice_reg;
  return j;
}

TrainLogRow row_from_json(const nlohmann::json& j) {
  TrainLogRow r;
  r.iteration = j.at("iteration").get<int64_t>();
  r.similarity = j.at("similarity").get<double>();
  r.regularizer_sum = j.at("regularizer_sum").get<double>();
  r.total = j.at("total").get<double>();
  r.gradient_norm = j.value("gradient_norm", 0.0);
  if (j.contains("val_dice_ext")) r.val_dice_ext = j["val_dice_ext"].get<double>();
  if (j.contains("val_dice_reg")) r.val_dice_reg = j["val_dice_reg"].get<double>();
  return r;
}

struct TrainState {
  int64_t iteration = 0;
  AdamState adam;
  std::string rng_state;
  TrainResult result;
};

void save_state(const fs::path& path, const ErnetModel& model, const std::vector<NamedTensor>& trainable,
                const TrainState& s) {
  std::vector<NamedTensor> tensors = model.parameters();
  for (size_t i = 0; i < s.adam.first_moment.size(); ++i) {
    const Shape shape = trainable[i].tensor.shape();
    tensors.push_back({"adam.m." + trainable[i].name, Tensor::from_values(shape, s.adam.first_moment[i])});
    tensors.push_back({"adam.v." + trainable[i].name, Tensor::from_values(shape, s.adam.second_moment[i])});
  }
  nlohmann::json meta;
  meta["model"] = model.config().to_json();
  meta["iteration"] = s.iteration;
  meta["adam_step"] = s.adam.step;
  meta["rng_state"] = s.rng_state;
  meta["best_validation"] = s.result.best_validation;
  meta["best_iteration"] = s.result.best_iteration;
  meta["log"] = nlohmann::json::array();
  for (const auto& r : s.result.log) meta["log"].push_back(row_to_json(r));
  write_checkpoint(path, tensors, meta);
}

TrainState load_state(const fs::path& path, ErnetModel& model, const std::vector<NamedTensor>& trainable) {
  const Checkpoint ckpt = read_checkpoint(path);
  auto params = model.parameters();
  load_parameters(params, ckpt);
  TrainState s;
  s.iteration = ckpt.meta.at("iteration").get<int64_t>();
  s.adam.step = ckpt.meta.at("adam_step").get<int64_t>();
  s.rng_state = ckpt.meta.at("rng_state").get<std::string>();
  s.result.best_validation = ckpt.meta.at("best_validation").get<double>();
  s.result.best_iteration = ckpt.meta.at("best_iteration").get<int64_t>();
  for (const auto& r : ckpt.meta.at("log")) s.result.log.push_back(row_from_json(r));
  if (s.adam.step > 0) {
    for (const auto& p : trainable) {
      const Tensor* m = ckpt.find("adam.m." + p.name);
      const Tensor* v = ckpt.find("adam.v." + p.name);
      if (m == nullptr || v == nullptr) throw CheckpointError("checkpoint lacks optimizer state for " + p.name);
      s.adam.first_moment.emplace_back(m->values().begin(), m->values().end());
      s.adam.second_moment.emplace_back(v->values().begin(), v->values().end());
    }
  }
  return s;
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"learning_rate", learning_rate},
                      {"beta1", beta1},
                      {"beta2", beta2},
                      {"iterations", iterations},
                      {"seed", seed},
                      {"augmentation",
                       {{"translation", augmentation.translation},
                        {"rotation", augmentation.rotation},
                        {"scale", {augmentation.scale_lo, augmentation.scale_hi}}}},
                      {"validation_every", validation_every},
                      {"checkpoint_every", checkpoint_every},
                      {"gradient_clip", gradient_clip},
                      {"lr_decay_at", lr_decay_at},
                      {"lr_decay_factor", lr_decay_factor}};
  if (checkpoint_dir) j["checkpoint_dir"] = checkpoint_dir->string();
  if (resume_from) j["resume_from"] = resume_from->string();
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") {
      c.learning_rate = get_key<double>(j, key);
    } else if (key == "beta1") {
      c.beta1 = get_key<double>(j, key);
    } else if (key == "beta2") {
      c.beta2 = get_key<double>(j, key);
    } else if (key == "iterations") {
      c.iterations = get_key<int64_t>(j, key);
    } else if (key == "seed") {
      c.seed = get_key<uint64_t>(j, key);
    } else if (key == "augmentation") {
      for (const auto& [k, v] : value.items()) {
        if (k == "translation") {
          c.augmentation.translation = get_key<double>(value, k);
        } else if (k == "rotation") {
          c.augmentation.rotation = get_key<double>(value, k);
        } else if (k == "scale") {
          const auto s = get_key<std::array<double, 2>>(value, k);
          c.augmentation.scale_lo = s[0];
          c.augmentation.scale_hi = s[1];
        } else {
          throw ConfigError("unknown config key 'augmentation." + k + "'");
        }
      }
    } else if (key == "validation_every") {
      c.validation_every = get_key<int64_t>(j, key);
    } else if (key == "checkpoint_every") {
      c.checkpoint_every = get_key<int64_t>(j, key);
    } else if (key == "gradient_clip") {
      c.gradient_clip = get_key<double>(j, key);
    } else if (key == "lr_decay_at") {
      c.lr_decay_at = get_key<int64_t>(j, key);
    } else if (key == "lr_decay_factor") {
      c.lr_decay_factor = get_key<double>(j, key);
    } else if (key == "checkpoint_dir") {
      c.checkpoint_dir = get_key<std::string>(j, key);
    } else if (key == "resume_from") {
      c.resume_from = get_key<std::string>(j, key);
    } else if (key == "verbose") {
      c.verbose = get_key<bool>(j, key);
    } else {
      throw ConfigError("unknown train config key '" + key + "'");
    }
  }
  if (!(c.learning_rate > 0.0)) throw ConfigError("config key 'learning_rate': must be positive");
  if (c.iterations < 0) throw ConfigError("config key 'iterations': must be >= 0");
  if (c.gradient_clip < 0.0) throw ConfigError("config key 'gradient_clip': must be >= 0");
  if (c.lr_decay_at < 0) throw ConfigError("config key 'lr_decay_at': must be >= 0");
  if (!(c.lr_decay_factor > 0.0)) throw ConfigError("config key 'lr_decay_factor': must be positive");
  if (c.augmentation.scale_lo > c.augmentation.scale_hi || c.augmentation.scale_lo <= 0.0) {
    throw ConfigError("config key 'augmentation.scale': expected 0 < lo <= hi");
  }
  return c;
}

NonFiniteLossError::NonFiniteLossError(int64_t it, double value)
    : std::runtime_error("non-finite loss " + std::to_string(value) + " at iteration " + std::to_string(it)),
      iteration(it) {}

std::string to_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "iteration,similarity,regularizer_sum,total,gradient_norm,val_dice_ext,val_dice_reg\n";
  for (const auto& r : log) {
    os << r.iteration << ',' << r.similarity << ',' << r.regularizer_sum << ',' << r.total << ',' << r.gradient_norm
       << ',';
    if (r.val_dice_ext) os << *r.val_dice_ext;
    os << ',';
    if (r.val_dice_reg) os << *r.val_dice_reg;
    os << '\n';
  }
  return os.str();
}

TrainResult train(ErnetModel& model, const std::vector<PairData>& train_set, const std::vector<PairData>& val_set,
                  const TrainConfig& config) {
  if (train_set.empty()) throw std::invalid_argument("train: the training set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<NamedTensor> params = model.trainable_parameters();
  AdamConfig adam{config.learning_rate, config.beta1, config.beta2, 1e-8};
  Rng rng(config.seed);
  TrainState state;
  if (config.resume_from) {
    state = load_state(*config.resume_from, model, params);
    rng.set_state(state.rng_state);
  }
  if (config.checkpoint_dir) fs::create_directories(*config.checkpoint_dir);

  auto checkpoint = [&](const std::string& file) {
    if (!config.checkpoint_dir) return;
    state.rng_state = rng.state();
    save_state(*config.checkpoint_dir / file, model, params, state);
  };

  for (int64_t it = state.iteration + 1; it <= config.iterations; ++it) {
    const PairData& pair = train_set[rng.index(train_set.size())];
    Volume source = pair.source;
    if (!config.augmentation.is_identity()) {
      source = warp(source, random_affine(config.augmentation, rng, CoordinateFrame{source.extents}));
    }
    for (auto& p : params) p.tensor.zero_grad();
    TrainLogRow row;
    row.iteration = it;
    {
      Tape tape;
      ForwardResult f;
      {
        TapeScope scope(tape);
        f = model.forward(to_tensor(source), to_tensor(pair.target), Mode::Train);
      }
      const LossBreakdown& loss = *f.loss;
      if (!std::isfinite(loss.total)) throw NonFiniteLossError(it, loss.total);
      Tensor root = loss.total_tensor;
      if (root.requires_grad()) tape.backward(root);
      row.similarity = loss.similarity;
      row.regularizer_sum = loss.regularizer_sum();
      row.total = loss.total;
    }
    double sq = 0.0;
    for (const auto& p : params)
      if (p.tensor.has_grad())
        for (double g : p.tensor.grad()) sq += g * g;
    row.gradient_norm = std::sqrt(sq);
    if (config.gradient_clip > 0.0 && row.gradient_norm > config.gradient_clip) {
      const double scale = config.gradient_clip / row.gradient_norm;
      for (auto& p : params)
        if (p.tensor.has_grad())
          for (double& g : p.tensor.grad_buffer()) g *= scale;
    }
    adam.lr = config.lr_decay_at > 0 && it >= config.lr_decay_at ? config.learning_rate * config.lr_decay_factor
                                                                 : config.learning_rate;
    adam_step(params, state.adam, adam);
    state.iteration = it;

    if (config.validation_every > 0 && it % config.validation_every == 0 && !val_set.empty()) {
      const Evaluation ev = evaluate(model, val_set);
      row.val_dice_ext = ev.summary.dice_ext_mean;
      row.val_dice_reg = ev.summary.dice_reg_mean;
      const double score = ev.summary.dice_ext_mean + ev.summary.dice_reg_mean;
      if (score > state.result.best_validation) {
        state.result.best_validation = score;
        state.result.best_iteration = it;
        if (config.checkpoint_dir) model.save(*config.checkpoint_dir / "best.ckpt", {{"iteration", it}});
      }
      if (config.verbose) {
        std::cerr << "iteration " << it << " similarity " << row.similarity << " regularizer " << row.regularizer_sum
                  << " val_dice_ext " << *row.val_dice_ext << " val_dice_reg " << *row.val_dice_reg << '\n';
      }
    }
    state.result.log.push_back(row);
    if (config.checkpoint_every > 0 && it % config.checkpoint_every == 0) checkpoint("last.ckpt");
  }
  checkpoint("last.ckpt");
  if (config.checkpoint_dir) {
    std::ofstream log(*config.checkpoint_dir / "train_log.csv", std::ios::trunc);
    log << to_csv(state.result.log);
  }
  state.result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return state.result;
}

InferenceResult infer(const ErnetModel& model, const Volume& source, const Volume& target) {
  const ForwardResult f = model.forward(source, target, Mode::Infer);
  InferenceResult r;
  r.extracted = to_volume(f.extracted, source.spacing);
  r.warped = to_volume(f.output, source.spacing);
  r.transform = to_affine(f.transform);
  if (f.extraction) {
    r.mask = to_volume(f.extraction->cumulative_mask(), source.spacing);
    for (const auto& m : f.extraction->masks) r.stage_masks.push_back(to_volume(m, source.spacing));
  } else {
    r.mask = Volume(source.extents, 1.0);
    r.mask.spacing = source.spacing;
  }
  if (f.registration) {
    for (size_t k = 1; k < f.registration->warped.size(); ++k) {
      r.stage_warps.push_back(to_volume(f.registration->warped[k], source.spacing));
    }
  }
  return r;
}

void write_inference(const InferenceResult& r, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_rvol(out_dir / "extracted.rvol", r.extracted);
  write_rvol(out_dir / "mask.rvol", r.mask);
  write_rvol(out_dir / "warped.rvol", r.warped);
  for (size_t j = 0; j < r.stage_masks.size(); ++j) {
    write_rvol(out_dir / ("mask_stage" + std::to_string(j + 1) + ".rvol"), r.stage_masks[j]);
  }
  for (size_t k = 0; k < r.stage_warps.size(); ++k) {
    write_rvol(out_dir / ("warp_stage" + std::to_string(k + 1) + ".rvol"), r.stage_warps[k]);
  }
  const CoordinateFrame frame{r.extracted.extents};
  write_transform_file(out_dir / "transform_normalized.txt", r.transform, frame, TransformConvention::NormalizedCentered);
  write_transform_file(out_dir / "transform_voxel.txt", r.transform, frame, TransformConvention::Voxel);
}

Evaluation evaluate(const PairPredictor& predictor, const std::vector<PairData>& dataset) {
  Evaluation ev;
  for (const auto& pair : dataset) {
    if (!pair.mask || !pair.labels || !pair.target_labels) {
      ev.warnings.push_back("pair " + pair.name + ": missing truth mask or labels, skipped");
      continue;
    }
    const InferenceResult r = predictor(pair);
    const CoordinateFrame frame{pair.source.extents};
    MetricReport rep;
    rep.name = pair.name;
    rep.dice_ext = dice_ext(r.mask, *pair.mask);
    rep.component_count = count_components(r.mask);
    const DiceRegResult dr = dice_reg(*pair.labels, *pair.target_labels, r.transform, frame);
    rep.dice_reg = dr.mean;
    rep.per_label = dr.per_label;
    if (pair.transform) rep.translation_error = translation_error_voxels(r.transform, *pair.transform, frame);
    ev.reports.push_back(std::move(rep));
  }
  ev.summary = summarize(ev.reports);
  return ev;
}

Evaluation evaluate(const ErnetModel& model, const std::vector<PairData>& dataset) {
  Evaluation ev = evaluate([&model](const PairData& p) { return infer(model, p.source, p.target); }, dataset);
  if (model.config().extraction_stages == 0 && model.config().registration_stages == 0) {
    for (auto& rep : ev.reports) rep.warnings.emplace_back("degenerate configuration: output equals source");
  }
  return ev;
}

std::vector<PairData> phantom_dataset(uint64_t first_seed, int64_t count, const Extents& extents,
                                      const AugmentationRanges& ranges) {
  std::vector<PairData> out;
  for (int64_t i = 0; i < count; ++i) {
    const uint64_t seed = first_seed + static_cast<uint64_t>(i);
    out.push_back(to_pair(make_phantom(seed, extents, ranges), "phantom_" + std::to_string(seed)));
  }
  return out;
}

void write_dataset(const fs::path& dir, const std::vector<PairData>& pairs) {
  fs::create_directories(dir);
  std::vector<PairPaths> entries;
  std::optional<fs::path> shared_target, shared_target_labels;
  for (const auto& p : pairs) {
    PairPaths e;
    e.name = p.name;
    e.source = dir / (p.name + "_source.rvol");
    write_rvol(e.source, p.source);
    // Phantom targets are one shared atlas; store it once.
    if (!pairs.empty() && p.target.values == pairs.front().target.values) {
      if (!shared_target) {
        shared_target = dir / "target.rvol";
        write_rvol(*shared_target, p.target);
      }
      e.target = *shared_target;
    } else {
      e.target = dir / (p.name + "_target.rvol");
      write_rvol(e.target, p.target);
    }
    if (p.mask) {
      e.mask = dir / (p.name + "_mask.rvol");
      write_rvol(*e.mask, *p.mask);
    }
    if (p.labels) {
      e.labels = dir / (p.name + "_labels.rvol");
      write_rvol(*e.labels, *p.labels);
    }
    if (p.target_labels) {
      if (pairs.front().target_labels && p.target_labels->labels == pairs.front().target_labels->labels) {
        if (!shared_target_labels) {
          shared_target_labels = dir / "target_labels.rvol";
          write_rvol(*shared_target_labels, *p.target_labels);
        }
        e.target_labels = *shared_target_labels;
      } else {
        e.target_labels = dir / (p.name + "_target_labels.rvol");
        write_rvol(*e.target_labels, *p.target_labels);
      }
    }
    if (p.transform) {
      e.transform = dir / (p.name + "_transform.txt");
      write_transform_file(*e.transform, *p.transform, CoordinateFrame{p.source.extents},
                           TransformConvention::NormalizedCentered);
    }
    entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.json", entries);
}

}  // namespace ernet
