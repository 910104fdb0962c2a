#pragma once

#include <cstddef>
#include <vector>

#include "lfm/core/rng.hpp"
#include "lfm/core/types.hpp"

namespace lfm {

/// k-means partition under cosine distance. Centroids are unit vectors.
struct ClusterModel {
  std::size_t k = 0;
  Matrix centroids;                       // k x e, unit rows
  std::vector<std::size_t> assignments;   // per input row
  std::vector<double> objective_history;  // mean cosine distance after each iteration
  std::size_t iterations = 0;
  std::size_t reseeds = 0;  // empty clusters reseeded during Lloyd

  std::vector<std::size_t> cluster_sizes() const;
  /// Row indices of each cluster, ascending.
  std::vector<std::vector<std::size_t>> members() const;
};

/// Rows scaled to unit norm. Throws ValidationError naming the first
/// zero-norm row.
Matrix normalize_rows(const Matrix& x);

double cosine_distance(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

/// Lloyd iterations on unit-normalized rows with k-means++ seeding. Each
/// point goes to the centroid of largest cosine similarity (ties to the lower
/// cluster index); centroids are renormalized means. A cluster left empty is
/// reseeded with the point farthest from its own centroid, which keeps k
/// fixed. Stops when no assignment changes, when the objective improves by
/// less than tol, or after max_iters.
ClusterModel kmeans_cosine(const Matrix& embeddings, std::size_t k, Rng& rng,
                           std::size_t max_iters = 100, double tol = 0.0);

}  // namespace lfm
