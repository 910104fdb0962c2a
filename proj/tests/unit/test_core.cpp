#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <vector>

#include "lfm/core/dataset.hpp"
#include "lfm/core/dataset_io.hpp"
#include "lfm/core/error.hpp"
#include "lfm/core/gmm.hpp"
#include "lfm/core/rng.hpp"

using namespace lfm;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lfm_core_" + name);
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("rng is reproducible and streams are independent") {
  Rng a(42, 1), b(42, 1), c(42, 2);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);

  Rng parent(7);
  Rng d1 = parent.derive("kmeans");
  Rng d2 = parent.derive("kmeans");
  const auto before = Rng(7).next_u64();
  CHECK(d1.next_u64() == d2.next_u64());
  CHECK(parent.next_u64() == before);  // derive does not advance the parent
}

TEST_CASE("rng uniform and normal moments") {
  Rng r(3);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  // Means within 5 standard errors.
  CHECK(std::abs(su / n - 0.5) < 5.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(sn / n) < 5.0 / std::sqrt(n));
  CHECK(std::abs(sn2 / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
}

TEST_CASE("rng uniform_index covers the range evenly") {
  Rng r(11);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[r.uniform_index(7)];
  const double p = 1.0 / 7.0;
  for (int c : counts) CHECK(std::abs(c - n * p) < 5.0 * std::sqrt(n * p * (1 - p)));
}

TEST_CASE("dataset validation") {
  CHECK_THROWS_AS(LatentDataset(Matrix(0, 3)), ValidationError);
  Matrix bad = Matrix::Zero(2, 2);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(LatentDataset{bad}, ValidationError);
  CHECK_THROWS_AS(LatentDataset(Matrix::Zero(2, 2), {5, 5}), ValidationError);
  CHECK_THROWS_AS(LatentDataset(Matrix::Zero(2, 2), {1}), ValidationError);
  CHECK_THROWS_AS(LatentDataset(Matrix::Zero(2, 2), {}, Matrix::Zero(3, 2)), ValidationError);
  CHECK_THROWS_AS(LatentDataset(Matrix::Zero(2, 2), {}, std::nullopt, std::vector<std::int32_t>{1}), ValidationError);
}

TEST_CASE("dataset subsets keep ids") {
  Matrix m(4, 2);
  m << 0, 0, 1, 1, 2, 2, 3, 3;
  const LatentDataset ds(m, {10, 20, 30, 40});
  CHECK(ds.row_of(30) == std::optional<std::size_t>(2));
  CHECK_FALSE(ds.row_of(31).has_value());
  const std::vector<std::size_t> rows{3, 1};
  const LatentDataset sub = ds.subset(rows);
  CHECK(sub.size() == 2);
  CHECK(sub.id(0) == 40);
  CHECK(sub.id(1) == 20);
  CHECK(sub.row(0)(0) == 3.0);
  const std::vector<SampleId> ids{20};
  CHECK(ds.select_ids(ids).row(0)(1) == 1.0);
  const std::vector<SampleId> missing{99};
  CHECK_THROWS_AS(ds.select_ids(missing), ValidationError);
  CHECK(&ds.selection_space() == &ds.data());
}

TEST_CASE("gmm spec validation") {
  GmmSpec spec = random_gmm_spec(3, 2, 1.0, 0.1, 1);
  CHECK_NOTHROW(spec.validate());
  spec.components[0].weight = 0.7;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec.components[0].weight = 0.5;
  spec.components[1].scale = -1.0;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
}

TEST_CASE("gmm samples follow the component weights") {
  GmmSpec spec = random_gmm_spec(2, 3, 5.0, 0.0, 9);
  spec.components[0].weight = 0.5;
  spec.components[1].weight = 0.3;
  spec.components[2].weight = 0.2;
  const std::size_t n = 20000;
  const LatentDataset ds = generate_gmm(spec, n);
  REQUIRE(ds.has_labels());
  std::vector<int> counts(3, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = ds.labels()[i];
    ++counts[static_cast<std::size_t>(c)];
    // Zero scale: every sample is its component mean exactly.
    CHECK((ds.row(i).transpose() - spec.components[static_cast<std::size_t>(c)].mean).norm() == 0.0);
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double p = spec.components[c].weight;
    CHECK(std::abs(counts[c] - n * p) < 4.0 * std::sqrt(n * p * (1 - p)));
  }
}

TEST_CASE("gmm generation is deterministic and ids can be offset") {
  const GmmSpec spec = random_gmm_spec(5, 4, 1.0, 0.1, 3);
  const LatentDataset a = generate_gmm(spec, 100);
  const LatentDataset b = generate_gmm(spec, 100, 1000);
  CHECK(a.data() == b.data());
  CHECK(b.id(0) == 1000);
  CHECK(b.id(99) == 1099);
}

TEST_CASE("dataset file round trip") {
  const GmmSpec spec = random_gmm_spec(6, 2, 1.0, 0.5, 5);
  const LatentDataset ds = generate_gmm(spec, 30);
  const auto path = temp_path("roundtrip.lfsd");
  save_dataset(ds, path);
  const LatentDataset back = load_dataset(path);
  REQUIRE(back.size() == 30);
  REQUIRE(back.dim() == 6);
  CHECK(back.labels() == ds.labels());
  // Stored as f32.
  CHECK((back.data() - ds.data()).cwiseAbs().maxCoeff() < 1e-6 * (1.0 + ds.data().cwiseAbs().maxCoeff()));
  CHECK(back.id(29) == 29);

  const auto bytes = read_bytes(path);
  CHECK(bytes.size() == 4 + 4 + 8 + 8 + 8 + 4 + 30 * 6 * 4 + 30 * 4);
  save_dataset(ds, path);
  CHECK(read_bytes(path) == bytes);
}

TEST_CASE("dataset file errors") {
  const LatentDataset ds(Matrix::Ones(3, 2));
  const auto path = temp_path("errors.lfsd");
  save_dataset(ds, path);
  const auto good = read_bytes(path);

  auto bad = good;
  bad[0] = 'X';
  write_bytes(path, bad);
  CHECK_THROWS_AS(load_dataset(path), IoError);

  bad = good;
  bad[4] = 9;
  write_bytes(path, bad);
  CHECK_THROWS_AS(load_dataset(path), IoError);

  bad = good;
  bad.resize(bad.size() - 3);
  write_bytes(path, bad);
  CHECK_THROWS_AS(load_dataset(path), IoError);

  bad = good;
  bad.push_back(0);
  write_bytes(path, bad);
  CHECK_THROWS_AS(load_dataset(path), IoError);

  CHECK_THROWS_AS(load_dataset(temp_path("does-not-exist.lfsd")), IoError);
}
