#include "adaclip/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "adaclip/digest.hpp"
#include "adaclip/errors.hpp"

namespace adaclip {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw std::invalid_argument("expected an unsigned integer");
  return out;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  const double out = std::stod(v, &used);
  if (used != v.size() || !std::isfinite(out)) throw std::invalid_argument("expected a finite number");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false");
}

std::vector<std::size_t> to_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_u64(trim(item)));
  if (out.empty()) throw std::invalid_argument("expected a comma-separated list");
  return out;
}

struct Key {
  std::function<void(AppConfig&, const std::string&)> set;
  std::function<std::string(const AppConfig&)> get;
};

using Table = std::vector<std::pair<std::string, Key>>;

#define ADACLIP_SIZE(name, field)                                                     \
  {name, {[](AppConfig& c, const std::string& v) { c.field = to_u64(v); },            \
          [](const AppConfig& c) { return std::to_string(c.field); }}}
#define ADACLIP_DOUBLE(name, field)                                                   \
  {name, {[](AppConfig& c, const std::string& v) { c.field = to_double(v); },         \
          [](const AppConfig& c) { return fmt_double(c.field); }}}
#define ADACLIP_BOOL(name, field)                                                     \
  {name, {[](AppConfig& c, const std::string& v) { c.field = to_bool(v); },           \
          [](const AppConfig& c) { return std::string(c.field ? "true" : "false"); }}}

const Table& table() {
  static const Table keys = {
      ADACLIP_SIZE("seed", seed),
      {"vocab_file", {[](AppConfig& c, const std::string& v) { c.vocab_file = v; },
                      [](const AppConfig& c) { return c.vocab_file; }}},
      ADACLIP_SIZE("image_size", model.encoder.image_size),
      ADACLIP_SIZE("patch_size", model.encoder.patch_size),
      ADACLIP_SIZE("embed_dim_v", model.encoder.embed_dim_v),
      ADACLIP_SIZE("embed_dim_t", model.encoder.embed_dim_t),
      ADACLIP_SIZE("shared_dim", model.encoder.shared_dim),
      ADACLIP_SIZE("num_layers", model.encoder.num_layers),
      ADACLIP_SIZE("num_heads", model.encoder.num_heads),
      ADACLIP_SIZE("context_len", model.encoder.context_len),
      {"hierarchy_layers",
       {[](AppConfig& c, const std::string& v) { c.model.encoder.hierarchy_layers = to_list(v); },
        [](const AppConfig& c) {
          std::string out;
          for (std::size_t l : c.model.encoder.hierarchy_layers) out += (out.empty() ? "" : ",") + std::to_string(l);
          return out;
        }}},
      ADACLIP_SIZE("prompt_depth", model.prompts.depth),
      ADACLIP_SIZE("prompt_length", model.prompts.length),
      ADACLIP_BOOL("enable_static", model.prompts.enable_static),
      ADACLIP_BOOL("enable_dynamic", model.prompts.enable_dynamic),
      ADACLIP_DOUBLE("temperature", model.temperature),
      ADACLIP_BOOL("projection_per_layer", model.projection_per_layer),
      ADACLIP_BOOL("projection_trainable", model.projection_trainable),
      ADACLIP_SIZE("hsf_k", model.hsf.k),
      ADACLIP_SIZE("hsf_seed", model.hsf.seed),
      {"hsf_variant",
       {[](AppConfig& c, const std::string& v) {
          if (v == "top1") c.model.hsf.variant = hsf::Variant::kTop1;
          else if (v == "legacy") c.model.hsf.variant = hsf::Variant::kLegacy;
          else throw std::invalid_argument("expected top1 or legacy");
        },
        [](const AppConfig& c) {
          return std::string(c.model.hsf.variant == hsf::Variant::kTop1 ? "top1" : "legacy");
        }}},
      {"hsf_score_source",
       {[](AppConfig& c, const std::string& v) {
          if (v == "aggregated") c.model.hsf.score_source = hsf::ScoreSource::kAggregated;
          else if (v == "per_layer") c.model.hsf.score_source = hsf::ScoreSource::kPerLayer;
          else throw std::invalid_argument("expected aggregated or per_layer");
        },
        [](const AppConfig& c) {
          return std::string(c.model.hsf.score_source == hsf::ScoreSource::kAggregated ? "aggregated"
                                                                                         : "per_layer");
        }}},
      ADACLIP_SIZE("hsf_legacy_topk", model.hsf.legacy_topk),
      ADACLIP_SIZE("hsf_legacy_clusters", model.hsf.legacy_clusters),
      ADACLIP_SIZE("kmeans_max_iter", model.hsf.max_iter),
      ADACLIP_SIZE("epochs", train.epochs),
      ADACLIP_DOUBLE("learning_rate", train.lr),
      ADACLIP_DOUBLE("momentum", train.momentum),
      ADACLIP_SIZE("batch_size", train.batch_size),
      ADACLIP_SIZE("max_steps", train.max_steps),
      ADACLIP_DOUBLE("focal_alpha", train.focal_alpha),
      ADACLIP_DOUBLE("focal_gamma", train.focal_gamma),
      ADACLIP_DOUBLE("dice_eps", train.dice_eps),
      ADACLIP_DOUBLE("w_focal_map", train.weights.focal_map),
      ADACLIP_DOUBLE("w_dice_map", train.weights.dice_map),
      ADACLIP_DOUBLE("w_focal_score", train.weights.focal_score),
  };
  return keys;
}

#undef ADACLIP_SIZE
#undef ADACLIP_DOUBLE
#undef ADACLIP_BOOL

}  // namespace

void AppConfig::validate() const {
  model.validate();
  train.validate();
}

void AppConfig::set_seed(std::uint64_t s) {
  seed = s;
  model.hsf.seed = s;
  train.seed = s;
}

std::string AppConfig::dump() const {
  std::string out;
  for (const auto& [name, key] : table()) out += name + " = " + key.get(*this) + "\n";
  return out;
}

std::string AppConfig::digest() const { return sha256_hex(dump()); }

AppConfig parse_config(const std::string& text, const std::string& source) {
  AppConfig cfg;
  std::map<std::string, const Key*> index;
  for (const auto& [name, key] : table()) index.emplace(name, &key);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string name = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = index.find(name);
    if (it == index.end()) throw ConfigError(where + ": unknown key '" + name + "'");
    try {
      it->second->set(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + ": bad value for " + name + " ('" + value + "'): " + e.what());
    }
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EnvironmentError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace adaclip
