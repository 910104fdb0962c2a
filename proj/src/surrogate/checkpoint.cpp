#include "lfm/surrogate/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <iterator>
#include <vector>

#include "lfm/core/error.hpp"

namespace lfm {
namespace {

constexpr std::array<char, 4> kMagic{'L', 'F', 'S', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 40;

template <typename T>
void put(std::vector<unsigned char>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xffu));
}

class Cursor {
 public:
  Cursor(const std::vector<unsigned char>& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}

  template <typename T>
  T get(const char* field) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    need(sizeof(T), field);
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(buf_[pos_ + b]) << (8 * b);
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  void need(std::uint64_t bytes, const char* field) const {
    if (bytes > buf_.size() - pos_) throw IoError(path_.string() + ": truncated while reading " + field);
  }

  std::string take_string(std::size_t len) {
    need(len, "config");
    std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + len));
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::vector<unsigned char>& buf_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const SurrogateModel& model, const std::string& config_json, const std::filesystem::path& path) {
  std::vector<unsigned char> out(kMagic.begin(), kMagic.end());
  const SurrogateArch& a = model.arch();
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(a.dim));
  put(out, static_cast<std::uint64_t>(a.time_embedding));
  put(out, static_cast<std::uint64_t>(a.hidden.size()));
  for (std::size_t h : a.hidden) put(out, static_cast<std::uint64_t>(h));
  put(out, model.ema_decay());
  put(out, static_cast<std::uint64_t>(model.param_count()));
  for (Eigen::Index i = 0; i < model.params().size(); ++i) put(out, model.params()[i]);
  for (Eigen::Index i = 0; i < model.ema().size(); ++i) put(out, model.ema()[i]);
  put(out, static_cast<std::uint64_t>(config_json.size()));
  out.insert(out.end(), config_json.begin(), config_json.end());

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), buf.begin()))
    throw IoError(path.string() + ": not a surrogate checkpoint (bad magic)");
  Cursor c(buf, path);
  c.take_string(4);
  const auto version = c.get<std::uint32_t>("version");
  if (version != kVersion) throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  SurrogateArch arch;
  arch.dim = c.get<std::uint64_t>("dim");
  arch.time_embedding = c.get<std::uint64_t>("time embedding");
  const auto layers = c.get<std::uint64_t>("layer count");
  if (layers > 1024) throw IoError(path.string() + ": implausible layer count");
  arch.hidden.clear();
  for (std::uint64_t l = 0; l < layers; ++l) arch.hidden.push_back(c.get<std::uint64_t>("hidden width"));
  const auto decay = c.get<double>("ema decay");
  const auto count = c.get<std::uint64_t>("parameter count");
  if (count > kMaxCount) throw IoError(path.string() + ": implausible parameter count");
  c.need(16 * count, "parameters");
  Vector params(static_cast<Eigen::Index>(count)), ema(static_cast<Eigen::Index>(count));
  for (auto& v : params) v = c.get<double>("parameters");
  for (auto& v : ema) v = c.get<double>("ema parameters");
  const auto len = c.get<std::uint64_t>("config length");
  std::string json = c.take_string(len);
  if (!c.done()) throw IoError(path.string() + ": trailing bytes after checkpoint");
  try {
    return Checkpoint{SurrogateModel(std::move(arch), std::move(params), std::move(ema), decay), std::move(json)};
  } catch (const Error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace lfm
