#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "adaclip/checkpoint.hpp"
#include "adaclip/cli.hpp"
#include "adaclip/config.hpp"
#include "adaclip/data.hpp"
#include "adaclip/errors.hpp"

using namespace adaclip;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const char* kTinyConfig =
    "# tiny model for quick runs\n"
    "image_size = 32\n"
    "embed_dim_v = 16\nembed_dim_t = 16\nshared_dim = 16\n"
    "num_layers = 3\nhierarchy_layers = 1,2,3\n"
    "prompt_depth = 2\nprompt_length = 3\nhsf_k = 4\n"
    "epochs = 1\nmax_steps = 3\n";

}  // namespace

TEST_CASE("config parsing") {
  const auto c = parse_config(kTinyConfig);
  CHECK(c.model.encoder.image_size == 32);
  CHECK(c.model.encoder.hierarchy_layers == std::vector<std::size_t>{1, 2, 3});
  CHECK(c.model.hsf.k == 4);
  CHECK(c.train.max_steps == 3);

  const auto d = parse_config("");
  CHECK(d.model.encoder.hierarchy_layers == std::vector<std::size_t>{2, 3, 4, 6});
  CHECK(d.model.prompts.depth == 4);
  CHECK(d.model.prompts.length == 5);
  CHECK(d.model.hsf.k == 20);
  CHECK(d.train.lr == 0.01);
  CHECK(d.train.epochs == 5);

  CHECK_THROWS_AS(parse_config("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("image_size = 60\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs\n"), ConfigError);
  try {
    parse_config("seed = 1\n\nepochs = -\n", "x.cfg");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("x.cfg:3") != std::string::npos);
  }
  try {
    parse_config("focal_alpha = 2\n", "x.cfg");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("focal_alpha") != std::string::npos);
  }
}

TEST_CASE("config dump round trip") {
  auto c = parse_config(kTinyConfig);
  c.set_seed(17);
  c.model.hsf.variant = hsf::Variant::kLegacy;
  c.model.temperature = 0.5;
  c.train.weights.focal_score = 0.05;
  const auto back = parse_config(c.dump());
  CHECK(back.dump() == c.dump());
  CHECK(back.digest() == c.digest());
  CHECK(back.seed == 17);
  CHECK(back.train.seed == 17);
  CHECK(parse_config("").digest() != c.digest());
  CHECK(c.digest().size() == 64);
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir("ckpt_rt");
  const auto cfg = parse_config(kTinyConfig);
  AdaClipModel m(cfg.model, encoders::Vocabulary::builtin(), cfg.seed);
  for (Parameter* p : m.trainable_parameters())
    for (double& v : p->value.data()) v += 0.125;
  std::map<std::string, Tensor> vel{{"projection.weight", testing::random_tensor({16, 16}, 1)}};
  save_checkpoint(dir.path() / "a.ckpt", cfg, m, vel);
  const auto loaded = load_checkpoint(dir.path() / "a.ckpt");
  CHECK(loaded.config.dump() == cfg.dump());
  CHECK(loaded.velocities == vel);
  const auto orig = m.all_parameters();
  const auto back = loaded.model->all_parameters();
  REQUIRE(orig.size() == back.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    CHECK(orig[i]->name == back[i]->name);
    CHECK(orig[i]->value == back[i]->value);
  }
  save_checkpoint(dir.path() / "b.ckpt", loaded.config, *loaded.model, loaded.velocities);
  CHECK(read_bytes(dir.path() / "a.ckpt") == read_bytes(dir.path() / "b.ckpt"));
}

TEST_CASE("checkpoint format errors") {
  const auto cfg = parse_config(kTinyConfig);
  AdaClipModel m(cfg.model, encoders::Vocabulary::builtin(), 0);
  const std::string good = encode_checkpoint(make_checkpoint(cfg, m, {}));
  CHECK_NOTHROW(decode_checkpoint(good));

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
  std::string bad_digest = good;
  bad_digest[10] ^= 1;
  CHECK_THROWS_AS(decode_checkpoint(bad_digest), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(good.substr(0, good.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(good + "x"), FormatError);

  auto data = decode_checkpoint(good);
  data.tensors.pop_back();
  CHECK_THROWS_AS(restore_checkpoint(data, "t"), FormatError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), EnvironmentError);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"train"}).code == cli::kExitUsage);
  CHECK(run({"gen-data", "--size", "lots", "--out", "x"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
  CHECK(run({"gradcheck", "--size", "20"}).code == cli::kExitUsage);
  CHECK(run({"infer", "--checkpoint", "/nonexistent.ckpt", "--image", "x.pgm", "--category", "disks", "--out-map",
             "m.pgm"})
            .code == cli::kExitRuntime);

  testing::TempDir dir("cli_codes");
  std::ofstream(dir.path() / "bad.cfg") << "nonsense = 3\n";
  CHECK(run({"gen-data", "--out", (dir.path() / "d").string(), "--n-normal", "1", "--n-abnormal", "1", "--size", "32"})
            .code == cli::kExitOk);
  const Run bad = run({"train", "--config", (dir.path() / "bad.cfg").string(), "--train-manifest",
                       (dir.path() / "d" / "manifest.json").string(), "--out-checkpoint",
                       (dir.path() / "c.ckpt").string()});
  CHECK(bad.code == cli::kExitUsage);
  CHECK(bad.err.find("nonsense") != std::string::npos);
}

TEST_CASE("end-to-end commands") {
  testing::TempDir dir("cli_e2e");
  const fs::path root = dir.path();
  std::ofstream(root / "tiny.cfg") << kTinyConfig;
  auto gen = [&](const char* cat, const char* sub) {
    return run({"gen-data", "--out", (root / sub).string(), "--category", cat, "--n-normal", "2", "--n-abnormal", "2",
                "--size", "32", "--seed", "3"});
  };
  REQUIRE(gen("squares", "train").code == 0);
  REQUIRE(gen("disks", "test").code == 0);
  REQUIRE(gen("squares", "overlap").code == 0);

  const std::string cfg = (root / "tiny.cfg").string();
  const std::string train_m = (root / "train" / "manifest.json").string();
  const std::string test_m = (root / "test" / "manifest.json").string();
  const std::string ckpt = (root / "model.ckpt").string();

  const Run dump = run({"train", "--config", cfg, "--train-manifest", train_m, "--out-checkpoint", ckpt,
                        "--dump-config", "--seed", "5"});
  CHECK(dump.code == 0);
  CHECK(dump.out.find("seed = 5") != std::string::npos);
  CHECK_FALSE(fs::exists(ckpt));

  CHECK(run({"train", "--config", cfg, "--train-manifest", train_m, "--out-checkpoint", ckpt, "--test-manifest",
             (root / "overlap" / "manifest.json").string()})
            .code == cli::kExitRuntime);

  const Run tr = run({"train", "--config", cfg, "--train-manifest", train_m, "--out-checkpoint", ckpt,
                      "--test-manifest", test_m, "--loss-csv", (root / "loss.csv").string()});
  REQUIRE(tr.code == 0);
  CHECK(fs::exists(ckpt));
  std::ifstream csv(root / "loss.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 4);

  const Run inf = run({"infer", "--checkpoint", ckpt, "--image", (root / "test" / "images" / "disks_000.pgm").string(),
                       "--category", "disks", "--out-map", (root / "map.pgm").string(), "--out-score",
                       (root / "score.txt").string()});
  REQUIRE(inf.code == 0);
  const Tensor map = data::load_pgm(root / "map.pgm");
  CHECK(map.shape() == Shape{32, 32});
  const double score = std::stod(read_bytes(root / "score.txt"));
  CHECK(score > 0.0);
  CHECK(score < 1.0);

  const Run ev = run({"eval", "--checkpoint", ckpt, "--test-manifest", test_m, "--out-report",
                      (root / "report.json").string(), "--train-manifest", train_m});
  REQUIRE(ev.code == 0);
  CHECK(fs::exists(root / "report.txt"));
  const std::string report = read_bytes(root / "report.json");
  CHECK(run({"eval", "--checkpoint", ckpt, "--test-manifest", test_m, "--out-report", (root / "again.json").string()})
            .code == 0);
  CHECK(read_bytes(root / "again.json") == report);

  const std::string first = read_bytes(ckpt);
  REQUIRE(run({"train", "--config", cfg, "--train-manifest", train_m, "--out-checkpoint",
               (root / "model2.ckpt").string()})
              .code == 0);
  CHECK(read_bytes(root / "model2.ckpt") == first);
}

TEST_CASE("gradcheck on a small model") {
  auto cfg = cli::gradcheck_config(16, 0);
  cfg.model.encoder.embed_dim_v = cfg.model.encoder.embed_dim_t = cfg.model.encoder.shared_dim = 16;
  cfg.model.encoder.num_layers = 2;
  cfg.model.encoder.hierarchy_layers = {1, 2};
  cfg.model.prompts.depth = 1;
  const auto r = cli::gradcheck(cfg, 4);
  CHECK(r.tensors_checked > 0);
  CHECK(r.max_rel_error <= cli::kGradcheckTolerance);
  CHECK_THROWS_AS(cli::gradcheck_config(20, 0), UsageError);
  CHECK_THROWS_AS(cli::gradcheck_config(4, 0), UsageError);
}
