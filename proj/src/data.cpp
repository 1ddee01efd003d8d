#include "adaclip/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include "json.hpp"

#include "adaclip/errors.hpp"
#include "adaclip/random.hpp"

namespace adaclip::data {

namespace fs = std::filesystem;

ShapeFamily parse_family(std::string_view name) {
  if (name == "squares") return ShapeFamily::kSquares;
  if (name == "disks") return ShapeFamily::kDisks;
  if (name == "bars") return ShapeFamily::kBars;
  throw ConfigError("unknown shape family '" + std::string(name) + "' (expected squares, disks or bars)");
}

std::string family_name(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::kSquares: return "squares";
    case ShapeFamily::kDisks: return "disks";
    case ShapeFamily::kBars: return "bars";
  }
  return "?";
}

// ---- PGM ----

std::string encode_pgm(const Tensor& image) {
  if (image.rank() != 2 || image.size() == 0) throw UsageError("encode_pgm: expected a nonempty matrix");
  std::string out = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  out.reserve(out.size() + image.size());
  for (double v : image.data()) {
    if (!std::isfinite(v)) throw DomainError("encode_pgm: non-finite pixel");
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)))));
  }
  return out;
}

namespace {

class HeaderReader {
 public:
  HeaderReader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  // Whitespace and '#' comments between header fields.
  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > 1u << 24) fail(std::string("oversized ") + field);
      ++pos_;
    }
    if (pos_ == start) fail(std::string("expected ") + field);
    return value;
  }

  std::size_t pos_ = 0;
  std::string_view bytes_;
  const std::string& source_;
};

}  // namespace

Tensor decode_pgm(std::string_view bytes, const std::string& source) {
  HeaderReader r(bytes, source);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') r.fail("bad magic (expected P5)");
  r.pos_ = 2;
  if (r.pos_ < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[r.pos_])) && bytes[r.pos_] != '#')
    r.fail("expected whitespace after magic");
  const std::size_t width = r.number("width");
  const std::size_t height = r.number("height");
  const std::size_t offset_maxval = r.pos_;
  const std::size_t maxval = r.number("maxval");
  if (width == 0 || height == 0) r.fail("zero image extent");
  if (maxval != 255) {
    r.pos_ = offset_maxval;
    r.skip_space();
    r.fail("unsupported maxval " + std::to_string(maxval) + " (expected 255)");
  }
  if (r.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos_])))
    r.fail("expected single whitespace before raster");
  ++r.pos_;
  const std::size_t need = width * height;
  if (bytes.size() - r.pos_ < need) {
    r.pos_ = bytes.size();
    r.fail("truncated raster: expected " + std::to_string(need) + " bytes");
  }
  Tensor out = Tensor::matrix(height, width, std::vector<double>(need));
  for (std::size_t i = 0; i < need; ++i)
    out[i] = static_cast<double>(static_cast<unsigned char>(bytes[r.pos_ + i])) / 255.0;
  return out;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EnvironmentError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw EnvironmentError("read failed: " + path.string());
  return bytes;
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw EnvironmentError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw EnvironmentError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw EnvironmentError("write failed: " + path.string());
}

}  // namespace

Tensor load_pgm(const fs::path& path) { return decode_pgm(read_file(path), path.string()); }

void save_pgm(const Tensor& image, const fs::path& path) { write_file(path, encode_pgm(image)); }

// ---- manifest ----

std::string DatasetManifest::to_json() const {
  nlohmann::ordered_json j;
  j["caption_normal_template"] = caption_normal_template;
  j["caption_abnormal_template"] = caption_abnormal_template;
  j["records"] = nlohmann::ordered_json::array();
  for (const Record& r : records) {
    nlohmann::ordered_json e;
    e["image_path"] = r.image_path;
    e["mask_path"] = r.mask_path;
    e["category"] = r.category;
    e["label"] = r.label;
    j["records"].push_back(e);
  }
  return j.dump(2) + "\n";
}

void DatasetManifest::save(const fs::path& path) const { write_file(path, to_json()); }

DatasetManifest DatasetManifest::load(const fs::path& path) {
  const std::string text = read_file(path);
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.caption_normal_template = j.at("caption_normal_template").get<std::string>();
    m.caption_abnormal_template = j.at("caption_abnormal_template").get<std::string>();
    for (const auto& e : j.at("records")) {
      Record r;
      r.image_path = e.at("image_path").get<std::string>();
      r.mask_path = e.at("mask_path").get<std::string>();
      r.category = e.at("category").get<std::string>();
      r.label = e.at("label").get<int>();
      if (r.label != 0 && r.label != 1) throw InputError(path.string() + ": label must be 0 or 1");
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  m.root = path.parent_path();
  return m;
}

std::set<std::string> DatasetManifest::categories() const {
  std::set<std::string> out;
  for (const Record& r : records) out.insert(r.category);
  return out;
}

// ---- synthetic generation ----

namespace {

struct Canvas {
  std::size_t size;
  Tensor pixels;
  explicit Canvas(std::size_t s, double background)
      : size(s), pixels(Tensor::matrix(s, s, std::vector<double>(s * s, background))) {}

  void fill_rect(double x0, double y0, double x1, double y1, double value) {
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double cx = x + 0.5, cy = y + 0.5;
        if (cx >= x0 && cx < x1 && cy >= y0 && cy < y1) pixels.at(y, x) = value;
      }
  }

  void fill_disk(double ox, double oy, double r, double value) {
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = x + 0.5 - ox, dy = y + 0.5 - oy;
        if (dx * dx + dy * dy <= r * r) pixels.at(y, x) = value;
      }
  }
};

void render_family(Canvas& canvas, ShapeFamily family, Rng& rng) {
  const double s = static_cast<double>(canvas.size);
  switch (family) {
    case ShapeFamily::kSquares: {
      const double side = rng.uniform(0.35, 0.5) * s;
      const double x0 = rng.uniform(0.1 * s, 0.9 * s - side);
      const double y0 = rng.uniform(0.1 * s, 0.9 * s - side);
      canvas.fill_rect(x0, y0, x0 + side, y0 + side, rng.uniform(0.75, 0.85));
      break;
    }
    case ShapeFamily::kDisks: {
      const double r = rng.uniform(0.2, 0.3) * s;
      const double ox = rng.uniform(0.1 * s + r, 0.9 * s - r);
      const double oy = rng.uniform(0.1 * s + r, 0.9 * s - r);
      canvas.fill_disk(ox, oy, r, rng.uniform(0.2, 0.3));
      break;
    }
    case ShapeFamily::kBars: {
      const auto count = rng.uniform_int(2, 3);
      const double band = s / static_cast<double>(count);
      for (std::int64_t b = 0; b < count; ++b) {
        const double h = rng.uniform(0.08, 0.12) * s;
        const double y0 = band * static_cast<double>(b) + rng.uniform(0.0, band - h);
        canvas.fill_rect(0.05 * s, y0, 0.95 * s, y0 + h, rng.uniform(0.7, 0.8));
      }
      break;
    }
  }
}

// Elliptical blob of 3-8 px extent per axis. Returns its mask.
Tensor inject_defect(Canvas& canvas, Rng& rng) {
  const std::size_t n = canvas.size;
  const auto wx = static_cast<double>(rng.uniform_int(kDefectMinPx, kDefectMaxPx));
  const auto wy = static_cast<double>(rng.uniform_int(kDefectMinPx, kDefectMaxPx));
  const double margin = kDefectMaxPx;
  const double ox = rng.uniform(margin, static_cast<double>(n) - margin);
  const double oy = rng.uniform(margin, static_cast<double>(n) - margin);
  Tensor mask = Tensor::matrix(n, n, std::vector<double>(n * n, 0.0));
  double under = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = (x + 0.5 - ox) / (wx / 2.0), dy = (y + 0.5 - oy) / (wy / 2.0);
      if (dx * dx + dy * dy <= 1.0) {
        mask.at(y, x) = 1.0;
        under += canvas.pixels.at(y, x);
        ++count;
      }
    }
  if (count == 0) {  // unreachable for the ranges above, kept for safety
    const auto cx = static_cast<std::size_t>(ox), cy = static_cast<std::size_t>(oy);
    mask.at(cy, cx) = 1.0;
    under = canvas.pixels.at(cy, cx);
    count = 1;
  }
  const double color = under / static_cast<double>(count) > 0.5 ? rng.uniform(0.0, 0.1) : rng.uniform(0.9, 1.0);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] > 0.5) canvas.pixels[i] = color;
  return mask;
}

std::string numbered(const std::string& stem, std::size_t i, const char* suffix) {
  std::ostringstream os;
  os << stem << '_' << std::setw(3) << std::setfill('0') << i << suffix;
  return os.str();
}

}  // namespace

DatasetManifest gen_synthetic(const SynthOptions& options, const fs::path& out_dir) {
  if (options.image_size < 2 * kDefectMaxPx + 1)
    throw InputError("gen_synthetic: image size must be at least " + std::to_string(2 * kDefectMaxPx + 1));
  if (options.n_normal + options.n_abnormal == 0) throw InputError("gen_synthetic: no images requested");
  const std::string category = family_name(options.family);
  DatasetManifest manifest;
  manifest.root = out_dir;
  const std::size_t total = options.n_normal + options.n_abnormal;
  for (std::size_t i = 0; i < total; ++i) {
    Rng rng(mix_seed(options.seed, 1000 + i));
    Canvas canvas(options.image_size, rng.uniform(0.45, 0.55));
    render_family(canvas, options.family, rng);
    const bool abnormal = i >= options.n_normal;
    Tensor mask = abnormal ? inject_defect(canvas, rng)
                           : Tensor::matrix(options.image_size, options.image_size,
                                            std::vector<double>(options.image_size * options.image_size, 0.0));
    for (double& v : canvas.pixels.data()) v = std::clamp(v + rng.normal(0.0, kPixelNoise), 0.0, 1.0);

    Record r;
    r.image_path = "images/" + numbered(category, i, ".pgm");
    r.mask_path = "masks/" + numbered(category, i, "_mask.pgm");
    r.category = category;
    r.label = abnormal ? 1 : 0;
    save_pgm(canvas.pixels, out_dir / r.image_path);
    save_pgm(mask, out_dir / r.mask_path);
    manifest.records.push_back(std::move(r));
  }
  manifest.save(out_dir / "manifest.json");
  return manifest;
}

// ---- captions and loading ----

namespace {

std::string substitute(const std::string& tmpl, const std::string& category, const char* which) {
  const auto at = tmpl.find(kClassPlaceholder);
  if (at == std::string::npos)
    throw ConfigError(std::string(which) + " caption template lacks the [CLS] placeholder: '" + tmpl + "'");
  std::string out = tmpl;
  out.replace(at, kClassPlaceholder.size(), category);
  return out;
}

}  // namespace

std::pair<std::string, std::string> make_captions(const std::string& category, const DatasetManifest& manifest) {
  return {substitute(manifest.caption_normal_template, category, "normal"),
          substitute(manifest.caption_abnormal_template, category, "abnormal")};
}

void assert_zero_shot(const DatasetManifest& train, const DatasetManifest& test) {
  const auto a = train.categories(), b = test.categories();
  std::vector<std::string> shared;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(shared));
  if (shared.empty()) return;
  std::string names;
  for (const auto& s : shared) names += (names.empty() ? "" : ", ") + s;
  throw InputError("train and test manifests share categories: " + names);
}

std::vector<Sample> load_samples(const DatasetManifest& manifest) {
  std::vector<Sample> out;
  for (const Record& r : manifest.records) {
    Sample s;
    s.image = load_pgm(manifest.resolve(r.image_path));
    s.mask = load_pgm(manifest.resolve(r.mask_path));
    if (s.mask.shape() != s.image.shape()) throw InputError(r.mask_path + ": mask extents differ from image");
    bool positive = false;
    for (double v : s.mask.data()) {
      if (v != 0.0 && v != 1.0) throw InputError(r.mask_path + ": mask is not binary");
      positive = positive || v == 1.0;
    }
    if (positive != (r.label == 1))
      throw InputError(r.image_path + ": label " + std::to_string(r.label) + " disagrees with its mask");
    s.label = r.label;
    s.category = r.category;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace adaclip::data
