#include "lfm/core/gmm.hpp"

#include <cmath>
#include <string>

#include "lfm/core/error.hpp"

namespace lfm {

void GmmSpec::validate() const {
  if (dim == 0) throw ValidationError("gmm: dim must be positive");
  if (components.empty()) throw ValidationError("gmm: no components");
  double total = 0.0;
  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& c = components[k];
    const std::string tag = "gmm component " + std::to_string(k);
    if (!(c.weight >= 0.0)) throw ValidationError(tag + ": negative weight");
    if (!(c.scale >= 0.0) || !std::isfinite(c.scale))
      throw ValidationError(tag + ": scale must be non-negative");
    if (static_cast<std::size_t>(c.mean.size()) != dim)
      throw ValidationError(tag + ": mean has wrong dimension");
    if (!c.mean.allFinite()) throw ValidationError(tag + ": non-finite mean");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ValidationError("gmm: weights sum to " + std::to_string(total) + ", expected 1");
}

GmmSpec random_gmm_spec(std::size_t dim, std::size_t components, double mean_scale,
                        double component_scale, std::uint64_t seed) {
  if (components == 0) throw ValidationError("gmm: need at least one component");
  Rng rng(seed, stream_id("gmm-means"));
  GmmSpec spec;
  spec.dim = dim;
  spec.seed = seed;
  spec.components.resize(components);
  for (auto& c : spec.components) {
    c.weight = 1.0 / static_cast<double>(components);
    c.scale = component_scale;
    c.mean.resize(static_cast<Eigen::Index>(dim));
    for (Eigen::Index j = 0; j < c.mean.size(); ++j) c.mean[j] = mean_scale * rng.normal();
  }
  return spec;
}

LatentDataset generate_gmm(const GmmSpec& spec, std::size_t n, SampleId first_id) {
  spec.validate();
  if (n == 0) throw ValidationError("gmm: n must be positive");
  Rng rng(spec.seed, stream_id("gmm-samples"));

  std::vector<double> cumulative;
  double acc = 0.0;
  for (const auto& c : spec.components) cumulative.push_back(acc += c.weight);

  const auto d = static_cast<Eigen::Index>(spec.dim);
  Matrix data(static_cast<Eigen::Index>(n), d);
  std::vector<SampleId> ids(n);
  std::vector<std::int32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    std::size_t k = 0;
    // Strict comparison skips zero-weight components.
    while (k + 1 < cumulative.size() && !(u < cumulative[k])) ++k;
    const auto& c = spec.components[k];
    auto row = data.row(static_cast<Eigen::Index>(i));
    for (Eigen::Index j = 0; j < d; ++j) row[j] = c.mean[j] + c.scale * rng.normal();
    ids[i] = first_id + static_cast<SampleId>(i);
    labels[i] = static_cast<std::int32_t>(k);
  }
  return LatentDataset(std::move(data), std::move(ids), std::nullopt, std::move(labels));
}

Matrix sample_source(Rng& rng, std::size_t m, std::size_t d) {
  if (m == 0 || d == 0) throw ValidationError("sample_source: m and d must be positive");
  Matrix x(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
  return x;
}

}  // namespace lfm
