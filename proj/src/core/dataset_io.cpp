#include "lfm/core/dataset_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lfm/core/error.hpp"

namespace lfm {
namespace {

constexpr std::array<char, 4> kMagic{'L', 'F', 'S', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagLabels = 1u;

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(T); ++b)
    out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xffu));
}

class Reader {
 public:
  Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  template <typename T>
  T get(const char* field) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    unsigned char buf[sizeof(T)];
    if (!in_.read(reinterpret_cast<char*>(buf), sizeof(T)))
      throw IoError(path_.string() + ": truncated while reading " + field);
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(buf[b]) << (8 * b);
    return std::bit_cast<T>(bits);
  }

  void read_f32_block(Matrix& m, const char* field) {
    const std::size_t count = static_cast<std::size_t>(m.size());
    std::vector<unsigned char> raw(count * 4);
    if (count > 0 && !in_.read(reinterpret_cast<char*>(raw.data()),
                               static_cast<std::streamsize>(raw.size())))
      throw IoError(path_.string() + ": truncated payload in " + field);
    for (std::size_t k = 0; k < count; ++k) {
      std::uint32_t bits = 0;
      for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[4 * k + b]) << (8 * b);
      m.data()[k] = static_cast<double>(std::bit_cast<float>(bits));
    }
  }

 private:
  std::istream& in_;
  const std::filesystem::path& path_;
};

}  // namespace

void save_dataset(const LatentDataset& ds, const std::filesystem::path& path) {
  const std::uint64_t n = ds.size();
  const std::uint64_t d = ds.dim();
  const std::uint64_t e = ds.has_embeddings() ? static_cast<std::uint64_t>(ds.embeddings().cols()) : 0;
  const std::uint32_t flags = ds.has_labels() ? kFlagLabels : 0u;

  std::vector<unsigned char> out;
  out.reserve(40 + 4 * n * (d + e + 1));
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_le(out, kVersion);
  put_le(out, n);
  put_le(out, d);
  put_le(out, e);
  put_le(out, flags);
  const Matrix& data = ds.data();
  for (Eigen::Index k = 0; k < data.size(); ++k) put_le(out, static_cast<float>(data.data()[k]));
  if (e > 0) {
    const Matrix& emb = ds.embeddings();
    for (Eigen::Index k = 0; k < emb.size(); ++k) put_le(out, static_cast<float>(emb.data()[k]));
  }
  if (flags & kFlagLabels)
    for (std::int32_t label : ds.labels()) put_le(out, label);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path.string() + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError(path.string() + ": write failed");
}

LatentDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path.string() + ": cannot open for reading");
  Reader r(f, path);

  std::array<char, 4> magic{};
  if (!f.read(magic.data(), 4)) throw IoError(path.string() + ": truncated while reading magic");
  if (magic != kMagic) throw IoError(path.string() + ": bad magic (not an LFSD dataset)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion)
    throw IoError(path.string() + ": unsupported version " + std::to_string(version));
  const auto n = r.get<std::uint64_t>("n");
  const auto d = r.get<std::uint64_t>("d");
  const auto e = r.get<std::uint64_t>("e");
  const auto flags = r.get<std::uint32_t>("flags");
  if (n == 0) throw IoError(path.string() + ": header field n is zero");
  if (d == 0) throw IoError(path.string() + ": header field d is zero");
  if (flags & ~kFlagLabels) throw IoError(path.string() + ": unknown bits in header field flags");

  // Reject headers that promise more payload than the file holds before allocating.
  const auto here = f.tellg();
  f.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(f.tellg() - here);
  f.seekg(here);
  const std::uint64_t expected = 4 * n * (d + e) + ((flags & kFlagLabels) ? 4 * n : 0);
  if (remaining < expected)
    throw IoError(path.string() + ": truncated payload (header n=" + std::to_string(n) +
                  ", d=" + std::to_string(d) + " needs " + std::to_string(expected) +
                  " bytes, found " + std::to_string(remaining) + ")");
  if (remaining > expected)
    throw IoError(path.string() + ": trailing bytes after payload (dimension mismatch)");

  Matrix data(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  r.read_f32_block(data, "data");
  std::optional<Matrix> emb;
  if (e > 0) {
    emb.emplace(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(e));
    r.read_f32_block(*emb, "embeddings");
  }
  std::optional<std::vector<std::int32_t>> labels;
  if (flags & kFlagLabels) {
    labels.emplace(n);
    for (auto& l : *labels) l = r.get<std::int32_t>("labels");
  }
  return LatentDataset(std::move(data), {}, std::move(emb), std::move(labels));
}

}  // namespace lfm
