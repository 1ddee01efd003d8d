#include "adaclip/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adaclip/digest.hpp"
#include "adaclip/errors.hpp"

namespace adaclip {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void pod(T v) { raw(&v, sizeof v); }
  void str(std::string_view s) {
    pod<std::uint64_t>(s.size());
    raw(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }
  void raw(void* p, std::size_t n) {
    if (bytes_.size() - pos_ < n) fail("truncated checkpoint");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > bytes_.size() - pos_) fail("string length exceeds file");
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const CheckpointData& data) {
  Writer w;
  w.raw(kCheckpointMagic, 4);
  w.pod<std::uint32_t>(kCheckpointVersion);
  Sha256 sha;
  sha.update(data.config_text);
  const auto digest = sha.finish();
  w.raw(digest.data(), digest.size());
  w.str(data.config_text);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(data.vocabulary.size()));
  for (const auto& word : data.vocabulary) w.str(word);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& [name, t] : data.tensors) {
    w.str(name);
    w.pod<std::uint8_t>(kDtypeF64);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.pod<std::uint64_t>(d);
    w.raw(t.data().data(), t.size() * sizeof(double));
  }
  return w.take();
}

CheckpointData decode_checkpoint(std::string_view bytes, const std::string& source) {
  Reader r(bytes, source);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) r.fail("bad magic (not a checkpoint)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  std::array<unsigned char, 32> stored;
  r.raw(stored.data(), stored.size());
  CheckpointData data;
  data.config_text = r.str();
  Sha256 sha;
  sha.update(data.config_text);
  if (sha.finish() != stored) r.fail("config digest mismatch");
  const auto words = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < words; ++i) data.vocabulary.push_back(r.str());
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    if (r.pod<std::uint8_t>() != kDtypeF64) r.fail("unsupported dtype for tensor '" + name + "'");
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) r.fail("implausible rank for tensor '" + name + "'");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.pod<std::uint64_t>());
    const std::size_t n = shape_numel(shape);
    if (n > (bytes.size() - r.pos()) / sizeof(double)) r.fail("truncated payload for tensor '" + name + "'");
    std::vector<double> values(n);
    r.raw(values.data(), n * sizeof(double));
    data.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) r.fail("trailing bytes after tensor table");
  return data;
}

CheckpointData make_checkpoint(const AppConfig& config, const AdaClipModel& model,
                               const std::map<std::string, Tensor>& velocities) {
  CheckpointData data;
  data.config_text = config.dump();
  data.vocabulary = model.vocabulary().words();
  for (const Parameter* p : model.all_parameters()) data.tensors.emplace_back(p->name, p->value);
  for (const auto& [name, v] : velocities) data.tensors.emplace_back(std::string(kVelocityPrefix) + name, v);
  return data;
}

void save_checkpoint(const std::filesystem::path& path, const AppConfig& config, const AdaClipModel& model,
                     const std::map<std::string, Tensor>& velocities) {
  const std::string bytes = encode_checkpoint(make_checkpoint(config, model, velocities));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw EnvironmentError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw EnvironmentError("write failed: " + path.string());
}

LoadedCheckpoint restore_checkpoint(const CheckpointData& data, const std::string& source) {
  LoadedCheckpoint out;
  try {
    out.config = parse_config(data.config_text, source + " (embedded config)");
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  out.model = std::make_unique<AdaClipModel>(out.config.model, encoders::Vocabulary(data.vocabulary),
                                             out.config.seed);
  std::map<std::string, Parameter*> params;
  for (Parameter* p : out.model->all_parameters()) params.emplace(p->name, p);
  std::size_t assigned = 0;
  for (const auto& [name, t] : data.tensors) {
    if (name.rfind(kVelocityPrefix, 0) == 0) {
      const std::string target = name.substr(kVelocityPrefix.size());
      const auto it = params.find(target);
      if (it == params.end() || it->second->value.shape() != t.shape())
        throw FormatError(source + ": velocity '" + name + "' matches no parameter");
      out.velocities.emplace(target, t);
      continue;
    }
    const auto it = params.find(name);
    if (it == params.end()) throw FormatError(source + ": unexpected tensor '" + name + "'");
    if (it->second->value.shape() != t.shape())
      throw FormatError(source + ": tensor '" + name + "' has shape " + shape_to_string(t.shape()) + ", expected " +
                        shape_to_string(it->second->value.shape()));
    it->second->value = t;
    ++assigned;
  }
  if (assigned != params.size())
    throw FormatError(source + ": checkpoint holds " + std::to_string(assigned) + " of " +
                      std::to_string(params.size()) + " parameters");
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EnvironmentError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return restore_checkpoint(decode_checkpoint(bytes, path.string()), path.string());
}

}  // namespace adaclip
