#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lfm/core/dataset.hpp"
#include "lfm/core/rng.hpp"
#include "lfm/core/types.hpp"

namespace lfm {

struct GmmComponent {
  double weight = 1.0;
  Vector mean;
  double scale = 1.0;  // isotropic standard deviation
};

struct GmmSpec {
  std::vector<GmmComponent> components;
  std::size_t dim = 0;
  std::uint64_t seed = 0;

  /// Throws ValidationError unless weights sum to 1 (within 1e-9), are
  /// non-negative, scales are non-negative and every mean has length dim.
  void validate() const;
};

/// Equal-weight mixture whose component means are drawn from
/// N(0, mean_scale^2 I) using `seed`.
GmmSpec random_gmm_spec(std::size_t dim, std::size_t components, double mean_scale,
                        double component_scale, std::uint64_t seed);

/// Draws n samples: a component index from the weights, then the component
/// mean plus isotropic noise. Labels record the component; ids start at
/// first_id so that independently generated validation sets do not collide.
LatentDataset generate_gmm(const GmmSpec& spec, std::size_t n, SampleId first_id = 0);

/// m x d matrix of i.i.d. standard normal source points.
Matrix sample_source(Rng& rng, std::size_t m, std::size_t d);

}  // namespace lfm
