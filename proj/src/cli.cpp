#include "adaclip/cli.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include "CLI11.hpp"

#include "adaclip/checkpoint.hpp"
#include "adaclip/data.hpp"
#include "adaclip/errors.hpp"
#include "adaclip/eval.hpp"
#include "adaclip/numerics.hpp"
#include "adaclip/random.hpp"
#include "adaclip/training.hpp"

namespace adaclip::cli {

namespace fs = std::filesystem;

namespace {

encoders::Vocabulary vocabulary_for(const AppConfig& cfg) {
  return cfg.vocab_file.empty() ? encoders::Vocabulary::builtin() : encoders::Vocabulary::load(cfg.vocab_file);
}

std::string format_score(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", s);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw EnvironmentError("cannot write " + path.string());
  out << text;
  if (!out) throw EnvironmentError("write failed: " + path.string());
}

struct Common {
  std::optional<std::uint64_t> seed;
  bool dump_config = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Seed for every random stream of the command");
  cmd->add_flag("--dump-config", c.dump_config, "Print the effective configuration and exit");
}

// ---- gen-data ----

struct GenDataArgs {
  Common common;
  std::string out_dir;
  std::string category = "squares";
  std::size_t n_normal = 4, n_abnormal = 4, size = 64;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  data::SynthOptions o;
  o.family = data::parse_family(a.category);
  o.n_normal = a.n_normal;
  o.n_abnormal = a.n_abnormal;
  o.image_size = a.size;
  o.seed = a.common.seed.value_or(0);
  if (a.common.dump_config) {
    out << "out = " << a.out_dir << "\ncategory = " << a.category << "\nn_normal = " << a.n_normal
        << "\nn_abnormal = " << a.n_abnormal << "\nsize = " << a.size << "\nseed = " << o.seed << "\n";
    return kExitOk;
  }
  const auto m = data::gen_synthetic(o, a.out_dir);
  out << "wrote " << m.records.size() << " records to " << (fs::path(a.out_dir) / "manifest.json").string() << "\n";
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  Common common;
  std::string config_path, train_manifest, out_checkpoint, loss_csv, test_manifest;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  AppConfig cfg = a.config_path.empty() ? AppConfig{} : load_config(a.config_path);
  if (a.common.seed) cfg.set_seed(*a.common.seed);
  cfg.validate();
  if (a.common.dump_config) {
    out << cfg.dump();
    return kExitOk;
  }
  const auto manifest = data::DatasetManifest::load(a.train_manifest);
  if (!a.test_manifest.empty()) data::assert_zero_shot(manifest, data::DatasetManifest::load(a.test_manifest));
  const auto samples = data::load_samples(manifest);
  AdaClipModel model(cfg.model, vocabulary_for(cfg), cfg.seed);
  training::SgdMomentum opt(model.trainable_parameters(), cfg.train.lr, cfg.train.momentum);
  const auto result = training::train(model, samples, manifest, cfg.train, opt);
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e)
    out << "epoch " << e + 1 << " mean loss " << format_score(result.epoch_mean_loss[e]) << "\n";
  save_checkpoint(a.out_checkpoint, cfg, model, opt.velocities());
  const std::string csv = a.loss_csv.empty() ? a.out_checkpoint + ".loss.csv" : a.loss_csv;
  training::write_loss_csv(csv, result.steps);
  out << "checkpoint " << a.out_checkpoint << "\nloss log " << csv << "\n";
  return kExitOk;
}

// ---- infer ----

struct InferArgs {
  Common common;
  std::string checkpoint, image, category, out_map, out_score;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  auto loaded = load_checkpoint(a.checkpoint);
  if (a.common.seed) loaded.config.set_seed(*a.common.seed);
  if (a.common.dump_config) {
    out << loaded.config.dump();
    return kExitOk;
  }
  const Tensor image = data::load_pgm(a.image);
  const auto [normal, abnormal] = data::make_captions(a.category, data::DatasetManifest{});
  const auto result = loaded.model->infer(image, loaded.model->tokenize_captions(normal, abnormal));
  data::save_pgm(result.aggregated_map, a.out_map);
  const std::string line = format_score(result.image_score);
  if (!a.out_score.empty()) write_text(a.out_score, line + "\n");
  out << line << "\n";
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  Common common;
  std::string checkpoint, test_manifest, out_report, train_manifest;
  double noise_sigma = 0.0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto loaded = load_checkpoint(a.checkpoint);
  if (a.common.seed) loaded.config.set_seed(*a.common.seed);
  if (a.common.dump_config) {
    out << loaded.config.dump();
    return kExitOk;
  }
  if (a.noise_sigma < 0.0) throw UsageError("--noise-sigma must be non-negative");
  const auto manifest = data::DatasetManifest::load(a.test_manifest);
  if (!a.train_manifest.empty()) data::assert_zero_shot(data::DatasetManifest::load(a.train_manifest), manifest);
  eval::EvalOptions opts;
  opts.map_noise_sigma = a.noise_sigma;
  auto report = eval::evaluate(*loaded.model, manifest, loaded.config.seed, opts);
  report.config_digest = loaded.config.digest();
  fs::path text = a.out_report;
  text.replace_extension(".txt");
  report.write(a.out_report, text);
  out << report.to_text();
  return kExitOk;
}

// ---- gradcheck ----

struct GradcheckArgs {
  Common common;
  std::size_t size = 32;
  std::size_t coords = 32;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const AppConfig cfg = gradcheck_config(a.size, a.common.seed.value_or(0));
  if (a.common.dump_config) {
    out << cfg.dump();
    return kExitOk;
  }
  const auto r = gradcheck(cfg, a.coords);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "max relative error %.6e over %zu coordinates in %zu tensors (worst: %s)\n"
                "max absolute error %.3e; relative error with a 1e-8 floor %.3e\n",
                r.max_rel_error, r.coords_checked, r.tensors_checked, r.worst_parameter.c_str(), r.max_abs_error,
                r.max_rel_error_tight);
  out << buf;
  const bool pass = r.max_rel_error <= kGradcheckTolerance;
  out << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? kExitOk : kExitRuntime;
}

}  // namespace

AppConfig gradcheck_config(std::size_t size, std::uint64_t seed) {
  AppConfig cfg;
  if (size < cfg.model.encoder.patch_size)
    throw UsageError("--size " + std::to_string(size) + " is below one patch (" +
                     std::to_string(cfg.model.encoder.patch_size) + " px)");
  if (size % cfg.model.encoder.patch_size != 0)
    throw UsageError("--size must be a multiple of the patch size " + std::to_string(cfg.model.encoder.patch_size));
  cfg.model.encoder.image_size = size;
  cfg.set_seed(seed);
  cfg.validate();
  return cfg;
}

GradcheckResult gradcheck(const AppConfig& cfg, std::size_t coords_per_tensor) {
  AdaClipModel model(cfg.model, vocabulary_for(cfg), cfg.seed);
  Rng rng(mix_seed(cfg.seed, 77));
  // Move the zero-initialized generator off its starting point so every
  // path carries signal.
  for (Parameter* p : model.trainable_parameters())
    for (double& v : p->value.data()) v += rng.normal(0.0, 0.02);

  const std::size_t n = cfg.model.encoder.image_size;
  Tensor image(Shape{n, n});
  for (double& v : image.data()) v = rng.uniform();
  Tensor mask(Shape{n, n});
  for (std::size_t y = n / 4; y < n / 2; ++y)
    for (std::size_t x = n / 4; x < n / 2; ++x) mask.at(y, x) = 1.0;
  const auto [normal, abnormal] = data::make_captions("squares", data::DatasetManifest{});
  const CaptionPair captions = model.tokenize_captions(normal, abnormal);

  auto loss_fn = [&] { return training::total_loss(model.forward(image, captions), mask, 1, cfg.train); };
  GradcheckResult result;
  FiniteDiffOptions fd;
  fd.max_coords = coords_per_tensor;
  std::uint64_t k = 0;
  for (Parameter* p : model.trainable_parameters()) {
    fd.seed = mix_seed(cfg.seed, 200 + k++);
    fd.abs_floor = kGradcheckFloor;
    const auto r = finite_diff_check(loss_fn, *p, fd);
    if (r.max_rel_error > result.max_rel_error || result.tensors_checked == 0) {
      result.max_rel_error = r.max_rel_error;
      result.worst_parameter = p->name + "[" + std::to_string(r.worst_index) + "]";
    }
    result.max_abs_error = std::max(result.max_abs_error, r.max_abs_error);
    fd.abs_floor = FiniteDiffOptions{}.abs_floor;
    result.max_rel_error_tight = std::max(result.max_rel_error_tight, finite_diff_check(loss_fn, *p, fd).max_rel_error);
    result.coords_checked += r.coords_checked;
    ++result.tensors_checked;
    p->zero_grad();
  }
  return result;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Toy zero-shot anomaly detector with hybrid learnable prompts", "adaclip"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand(
      "gen-data",
      "Generate a synthetic category. Defects are elliptical blobs 3-8 px across per axis, colored\n"
      "dark (0.0-0.1) over bright pixels and bright (0.9-1.0) over dark ones; pixel noise sigma 0.05.");
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--category", gen.category, "Shape family: squares, disks or bars")->capture_default_str();
  gen_cmd->add_option("--n-normal", gen.n_normal, "Normal images")->capture_default_str();
  gen_cmd->add_option("--n-abnormal", gen.n_abnormal, "Abnormal images")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
  add_common(gen_cmd, gen.common);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train prompts and projection with the encoder frozen");
  train_cmd->add_option("--config", tr.config_path, "key=value config file (defaults when omitted)");
  train_cmd->add_option("--train-manifest", tr.train_manifest, "Training manifest.json")->required();
  train_cmd->add_option("--out-checkpoint", tr.out_checkpoint, "Checkpoint to write")->required();
  train_cmd->add_option("--loss-csv", tr.loss_csv, "Loss log (default <checkpoint>.loss.csv)");
  train_cmd->add_option("--test-manifest", tr.test_manifest, "Refuse to train if it shares a category");
  add_common(train_cmd, tr.common);

  InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "Anomaly map and score for one image");
  infer_cmd->add_option("--checkpoint", inf.checkpoint)->required();
  infer_cmd->add_option("--image", inf.image, "P5 PGM image")->required();
  infer_cmd->add_option("--category", inf.category, "Category name for the captions")->required();
  infer_cmd->add_option("--out-map", inf.out_map, "PGM anomaly map to write")->required();
  infer_cmd->add_option("--out-score", inf.out_score, "Also write the score to this file");
  add_common(infer_cmd, inf.common);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Image and pixel AUROC / max-F1 on a test manifest");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--test-manifest", ev.test_manifest)->required();
  eval_cmd->add_option("--out-report", ev.out_report, "report.json path; the text table goes next to it")
      ->required();
  eval_cmd->add_option("--train-manifest", ev.train_manifest, "Check zero-shot disjointness against it");
  eval_cmd->add_option("--noise-sigma", ev.noise_sigma, "Per-pixel noise on the anomaly maps")->capture_default_str();
  add_common(eval_cmd, ev.common);

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full training loss");
  gc_cmd->add_option("--size", gc.size, "Image side in pixels")->capture_default_str();
  gc_cmd->add_option("--coords", gc.coords, "Coordinates sampled per parameter tensor")->capture_default_str();
  add_common(gc_cmd, gc.common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(tr, out);
    if (*infer_cmd) return cmd_infer(inf, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*gc_cmd) return cmd_gradcheck(gc, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace adaclip::cli
