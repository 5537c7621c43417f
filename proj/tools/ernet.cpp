// ernet command-line front end.
//   phantom  write a synthetic dataset
//   train    unsupervised training
//   infer    run a model on one pair
//   eval     metrics against truth
//   verify   oracle equivalence and gradient suites
//   ablate   stage-count sweep
//
// Exit status: 0 ok, 1 validation error, 2 runtime failure.
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ernet/io.hpp"
#include "ernet/kernels.hpp"
#include "ernet/pipeline.hpp"
#include "ernet/refcheck.hpp"

namespace fs = std::filesystem;
using namespace ernet;

namespace {

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  uint64_t seed = 0;
  int threads = 0;
};

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "model" && key != "train") throw ConfigError("unknown top-level config key '" + key + "'");
  }
  return j;
}

// Model flags shared by train, infer and ablate. Only flags actually given override the file.
struct ModelFlags {
  std::vector<int64_t> stages;
  double lambda = 1.0, gamma = 10.0;
  int64_t window = kDefaultNccWindow;
  int64_t width_divisor = 1;
  std::string regularizer_scale;
  CLI::Option *o_stages = nullptr, *o_lambda = nullptr, *o_gamma = nullptr, *o_window = nullptr, *o_div = nullptr,
              *o_scale = nullptr;

  void add(CLI::App* app) {
    o_stages = app->add_option("--stages", stages, "Extraction and registration stage counts M N (0 disables)")
                   ->expected(2);
    o_lambda = app->add_option("--lambda", lambda, "Mask smoothness weight");
    o_gamma = app->add_option("--gamma", gamma, "Sigmoid slope of the training-mode mask");
    o_window = app->add_option("--window", window, "NCC window (odd)");
    o_div = app->add_option("--width-divisor", width_divisor, "Divide every network width by this factor");
    o_scale = app->add_option("--regularizer-scale", regularizer_scale, "sum | voxel_mean");
  }

  ModelConfig resolve(const nlohmann::json& file, uint64_t seed, bool seed_given) const {
    nlohmann::json j = file.value("model", nlohmann::json::object());
    if (o_div && o_div->count()) j["width_divisor"] = width_divisor;
    ModelConfig c = ModelConfig::from_json(j);
    if (o_stages && o_stages->count()) {
      c.extraction_stages = stages[0];
      c.registration_stages = stages[1];
    }
    if (o_lambda && o_lambda->count()) c.lambda = lambda;
    if (o_gamma && o_gamma->count()) c.gamma = gamma;
    if (o_window && o_window->count()) c.ncc_window = window;
    if (o_scale && o_scale->count()) c = ModelConfig::from_json({{"regularizer_scale", regularizer_scale}}, c);
    if (seed_given) c.init_seed = seed;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  double lr = 1e-6, clip = 0.0, decay_factor = 0.1;
  int64_t decay_at = 0;
  int64_t iterations = 2000, validation_every = 100, checkpoint_every = 0;
  std::string resume;
  bool augment = false, verbose = false;
  CLI::Option *o_lr = nullptr, *o_it = nullptr, *o_val = nullptr, *o_ck = nullptr, *o_resume = nullptr,
              *o_clip = nullptr, *o_decay_at = nullptr, *o_decay_factor = nullptr, *o_aug = nullptr, *o_verbose = nullptr;

  void add(CLI::App* app) {
    o_lr = app->add_option("--lr", lr, "Adam learning rate");
    o_it = app->add_option("--iterations", iterations, "Training iterations (one pair each)");
    o_val = app->add_option("--validation-every", validation_every, "Validation cadence in iterations (0 = off)");
    o_ck = app->add_option("--checkpoint-every", checkpoint_every, "Resumable checkpoint cadence (0 = end only)");
    o_resume = app->add_option("--resume", resume, "Resume from a last.ckpt");
    o_clip = app->add_option("--gradient-clip", clip, "Global gradient norm ceiling (0 = off)");
    o_decay_at = app->add_option("--lr-decay-at", decay_at, "Iteration from which the rate is scaled down (0 = never)");
    o_decay_factor = app->add_option("--lr-decay-factor", decay_factor, "Learning-rate multiplier after --lr-decay-at");
    o_aug = app->add_flag("--augment", augment, "Random affine augmentation of sources (+-5 vox, +-5 deg, 0.98-1.02)");
    o_verbose = app->add_flag("--verbose", verbose, "Print validation progress");
  }

  TrainConfig resolve(const nlohmann::json& file, uint64_t seed, bool seed_given, const std::string& out) const {
    TrainConfig c = TrainConfig::from_json(file.value("train", nlohmann::json::object()));
    if (o_lr->count()) c.learning_rate = lr;
    if (o_it->count()) c.iterations = iterations;
    if (o_val->count()) c.validation_every = validation_every;
    if (o_ck->count()) c.checkpoint_every = checkpoint_every;
    if (o_resume->count()) c.resume_from = resume;
    if (o_clip->count()) c.gradient_clip = clip;
    if (o_decay_at->count()) c.lr_decay_at = decay_at;
    if (o_decay_factor->count()) c.lr_decay_factor = decay_factor;
    if (o_aug->count()) c.augmentation = AugmentationRanges::lpba40();
    if (o_verbose->count()) c.verbose = verbose;
    if (seed_given) c.seed = seed;
    if (!out.empty()) c.checkpoint_dir = out;
    if (!(c.learning_rate > 0.0)) throw ConfigError("config key 'learning_rate': must be positive");
    return c;
  }
};

void print_summary(std::ostream& os, const std::string& label, const MetricSummary& s) {
  os << std::fixed << std::setprecision(4) << std::left << std::setw(14) << label << " n=" << s.count
     << "  dice_ext " << s.dice_ext_mean << " +- " << s.dice_ext_std << "  dice_reg " << s.dice_reg_mean << " +- "
     << s.dice_reg_std << "  translation_error " << s.translation_error_mean << " +- " << s.translation_error_std
     << '\n';
}

std::vector<PairData> require_dataset(const std::string& path, const char* flag) {
  if (path.empty()) throw ValidationError(std::string("missing required path ") + flag);
  if (!fs::exists(path)) throw ValidationError(std::string(flag) + ": no such file " + path);
  return load_dataset(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ERNet: joint multi-stage brain extraction and affine registration"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "JSON file with \"model\" and \"train\" sections; flags override it");
  CLI::Option* o_seed = app.add_option("--seed", common.seed, "Seed for initialization, sampling and phantoms");
  app.add_option("--threads", common.threads, "OpenMP worker count (0 = default)");

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Write a synthetic phantom dataset with truth");
  std::string ph_out;
  int64_t ph_count = 10, ph_size = 32;
  uint64_t ph_first = 1000;
  double ph_translation = 5.0, ph_rotation = 5.0;
  std::vector<double> ph_scale{0.98, 1.02};
  phantom->add_option("--out", ph_out, "Output directory")->required();
  phantom->add_option("--count", ph_count, "Number of pairs");
  phantom->add_option("--first-seed", ph_first, "Seed of the first phantom (defaults to --seed when given)");
  phantom->add_option("--size", ph_size, "Cubic extent (>= 32)");
  phantom->add_option("--translation", ph_translation, "Truth translation range, +- voxels");
  phantom->add_option("--rotation", ph_rotation, "Truth rotation range, +- degrees");
  phantom->add_option("--scale", ph_scale, "Truth scale interval lo hi")->expected(2);

  // train
  auto* trn = app.add_subcommand("train", "Unsupervised training");
  std::string tr_train, tr_val, tr_out, tr_write_config;
  ModelFlags tr_model;
  TrainFlags tr_flags;
  trn->add_option("--train", tr_train, "Training manifest")->required();
  trn->add_option("--val", tr_val, "Validation manifest");
  trn->add_option("--out", tr_out, "Checkpoint directory")->required();
  trn->add_option("--write-config", tr_write_config, "Write the effective configuration as JSON");
  tr_model.add(trn);
  tr_flags.add(trn);

  // infer
  auto* inf = app.add_subcommand("infer", "Extract and register one pair");
  std::string in_model, in_source, in_target, in_out;
  ModelFlags in_flags;
  inf->add_option("--model", in_model, "Checkpoint (a fresh model from flags/config when omitted)");
  inf->add_option("--source", in_source, "Source volume (.rvol or .nii)")->required();
  inf->add_option("--target", in_target, "Target volume")->required();
  inf->add_option("--out", in_out, "Output directory")->required();
  in_flags.add(inf);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a model on a dataset with truth");
  std::string ev_model, ev_data, ev_out;
  ev->add_option("--model", ev_model, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset manifest")->required();
  ev->add_option("--out", ev_out, "Directory for report.json and report.csv");

  // verify
  auto* ver = app.add_subcommand("verify", "Oracle equivalence and gradient suites");
  int64_t ver_instances = 50;
  ver->add_option("--instances", ver_instances, "Random instances per equivalence suite");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and evaluate a grid of stage counts");
  std::string ab_train, ab_test, ab_out;
  std::vector<std::string> ab_grid{"1,1", "5,5", "0,5", "1,0", "5,0"};
  ModelFlags ab_model;
  TrainFlags ab_flags;
  abl->add_option("--train", ab_train, "Training manifest")->required();
  abl->add_option("--test", ab_test, "Test manifest")->required();
  abl->add_option("--out", ab_out, "Output directory")->required();
  abl->add_option("--grid", ab_grid, "Stage pairs as M,N (repeatable)");
  ab_model.add(abl);
  ab_flags.add(abl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (common.threads > 0) kernels::set_num_threads(common.threads);
    const nlohmann::json config = load_config(common.config_path);
    const bool seed_given = o_seed->count() > 0;

    if (*phantom) {
      const AugmentationRanges ranges{ph_translation, ph_rotation, ph_scale[0], ph_scale[1]};
      const uint64_t first = seed_given && !phantom->get_option("--first-seed")->count() ? common.seed : ph_first;
      const auto pairs = phantom_dataset(first, ph_count, {ph_size, ph_size, ph_size}, ranges);
      write_dataset(ph_out, pairs);
      std::cout << "wrote " << pairs.size() << " phantom pairs to " << (fs::path(ph_out) / "manifest.json").string()
                << '\n';
      return 0;
    }

    if (*trn) {
      const ModelConfig mc = tr_model.resolve(config, common.seed, seed_given);
      const TrainConfig tc = tr_flags.resolve(config, common.seed, seed_given, tr_out);
      if (!tr_write_config.empty()) {
        std::ofstream(tr_write_config) << nlohmann::json{{"model", mc.to_json()}, {"train", tc.to_json()}}.dump(2)
                                       << '\n';
      }
      const auto train_set = require_dataset(tr_train, "--train");
      const auto val_set = tr_val.empty() ? std::vector<PairData>{} : require_dataset(tr_val, "--val");
      ErnetModel model(mc);
      const TrainResult r = train(model, train_set, val_set, tc);
      model.save(fs::path(tr_out) / "final.ckpt");
      const auto& last = r.log.empty() ? TrainLogRow{} : r.log.back();
      std::cout << "trained " << r.log.size() << " iterations in " << std::fixed << std::setprecision(1) << r.seconds
                << " s; final similarity " << std::setprecision(4) << last.similarity << ", regularizer "
                << last.regularizer_sum << '\n';
      if (r.best_iteration > 0) {
        std::cout << "best validation (dice_ext + dice_reg) " << r.best_validation << " at iteration "
                  << r.best_iteration << '\n';
      }
      return 0;
    }

    if (*inf) {
      const Volume source = read_volume(in_source);
      const Volume target = read_volume(in_target);
      const ErnetModel model =
          in_model.empty() ? ErnetModel(in_flags.resolve(config, common.seed, seed_given)) : ErnetModel::load(in_model);
      const InferenceResult r = infer(model, source, target);
      write_inference(r, in_out);
      if (model.config().extraction_stages == 0 && model.config().registration_stages == 0) {
        std::cerr << "warning: extraction and registration both disabled; output equals source\n";
      }
      std::cout << "wrote " << r.stage_masks.size() << " mask stages and " << r.stage_warps.size()
                << " warp stages to " << in_out << '\n';
      return 0;
    }

    if (*ev) {
      const ErnetModel model = ErnetModel::load(ev_model);
      const auto data = require_dataset(ev_data, "--data");
      const Evaluation e = evaluate(model, data);
      for (const auto& w : e.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << std::left << std::setw(24) << "pair" << std::setw(10) << "dice_ext" << std::setw(10) << "dice_reg"
                << std::setw(12) << "components" << "translation_error\n";
      for (const auto& r : e.reports) {
        std::cout << std::left << std::setw(24) << r.name << std::fixed << std::setprecision(4) << std::setw(10)
                  << r.dice_ext << std::setw(10) << r.dice_reg << std::setw(12) << r.component_count
                  << r.translation_error << '\n';
      }
      print_summary(std::cout, "summary", e.summary);
      if (!ev_out.empty()) {
        fs::create_directories(ev_out);
        nlohmann::json j = {{"reports", nlohmann::json::array()}, {"summary", to_json(e.summary)}};
        for (const auto& r : e.reports) j["reports"].push_back(to_json(r));
        std::ofstream(fs::path(ev_out) / "report.json") << j.dump(2) << '\n';
        std::ofstream(fs::path(ev_out) / "report.csv") << to_csv(e.reports);
      }
      return 0;
    }

    if (*ver) {
      const auto report = refcheck::run_verify(common.seed, ver_instances);
      for (const auto& s : report.suites) {
        std::cout << (s.passed ? "PASS " : "FAIL ") << std::left << std::setw(64) << s.name << " n=" << std::setw(4)
                  << s.instances << " max_error=" << std::scientific << std::setprecision(3) << s.max_error
                  << " tol=" << s.tolerance << '\n';
      }
      std::cout << (report.all_passed() ? "verify: all suites passed" : "verify: FAILED") << '\n';
      return report.all_passed() ? 0 : 2;
    }

    if (*abl) {
      const auto train_set = require_dataset(ab_train, "--train");
      const auto test_set = require_dataset(ab_test, "--test");
      fs::create_directories(ab_out);
      std::ostringstream csv;
      csv << "M,N,dice_ext_mean,dice_ext_std,dice_reg_mean,dice_reg_std,translation_error_mean,seconds\n";
      for (const auto& cell : ab_grid) {
        int64_t m = 0, n = 0;
        char comma = 0;
        std::istringstream is(cell);
        if (!(is >> m >> comma >> n) || comma != ',') throw ValidationError("--grid entry '" + cell + "' is not M,N");
        ModelConfig mc = ab_model.resolve(config, common.seed, seed_given);
        mc.extraction_stages = m;
        mc.registration_stages = n;
        mc.validate();
        const std::string tag = "M" + std::to_string(m) + "_N" + std::to_string(n);
        TrainConfig tc = ab_flags.resolve(config, common.seed, seed_given, (fs::path(ab_out) / tag).string());
        tc.validation_every = 0;
        ErnetModel model(mc);
        const TrainResult tr = train(model, train_set, {}, tc);
        model.save(fs::path(ab_out) / tag / "final.ckpt");
        const Evaluation e = evaluate(model, test_set);
        print_summary(std::cout, tag, e.summary);
        csv << m << ',' << n << ',' << e.summary.dice_ext_mean << ',' << e.summary.dice_ext_std << ','
            << e.summary.dice_reg_mean << ',' << e.summary.dice_reg_std << ',' << e.summary.translation_error_mean
            << ',' << tr.seconds << '\n';
      }
      std::ofstream(fs::path(ab_out) / "ablation.csv") << csv.str();
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
