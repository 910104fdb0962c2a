#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lfm/core/dataset.hpp"
#include "lfm/core/rng.hpp"
#include "lfm/core/types.hpp"
#include "lfm/pruning/kmeans.hpp"

namespace lfm {

enum class QuotaMode { balanced, proportional };
enum class DistanceDirection { nearest, furthest };
enum class ScoreDirection { highest, lowest };

/// Outcome of one pruning criterion over a dataset.
struct PruneSelection {
  std::string criterion;
  double pr = 0.0;
  std::vector<SampleId> ids;      // every dataset id, in dataset row order
  std::vector<bool> kept;         // per row
  std::vector<double> scores;     // per row; NaN where the criterion has none
  std::vector<int> clusters;      // per row; -1 when unclustered
  std::vector<double> discrepancy;  // per cluster, kernel selections only

  std::size_t kept_count() const;
  /// Kept ids in ascending order.
  std::vector<SampleId> kept_ids() const;
};

/// Row indices of the dataset ordered by ascending id. Every routine below
/// visits rows in this order so results depend on ids, not on row layout.
std::vector<std::size_t> id_order(const LatentDataset& ds);

/// kmeans_cosine on the dataset's selection space (embeddings when present,
/// latent rows otherwise), visiting rows in id order. Assignments are
/// reported in dataset row order.
ClusterModel cluster_dataset(const LatentDataset& ds, std::size_t k, Rng& rng,
                             std::size_t max_iters = 100, double tol = 0.0);

/// round((1 - pr) * n), the number of samples a criterion keeps.
std::size_t keep_count(std::size_t n, double pr);

/// Per-cluster keep counts summing to keep_count(n, pr).
///
/// balanced: every cluster gets floor(T / k), the T mod k leftover units go to
/// the largest clusters (ties to the lower index). Clusters smaller than their
/// share keep all members and the deficit is spread over the remaining
/// capacity of the other clusters, proportionally, by largest remainder.
/// proportional: (1 - pr) |C_l| rounded by largest remainder.
std::vector<std::size_t> allocate_quota(const std::vector<std::size_t>& cluster_sizes, double pr,
                                        QuotaMode mode);

/// Within each cluster, ranks rows by cosine distance to the centroid and
/// keeps the quota from the requested end; ties by id.
PruneSelection select_by_distance(const LatentDataset& ds, const ClusterModel& model,
                                  const std::vector<std::size_t>& quotas, DistanceDirection dir,
                                  double pr = std::numeric_limits<double>::quiet_NaN());

/// Random Fourier features sqrt(2/D) cos(W x + b) approximating the Gaussian
/// kernel exp(-|x - y|^2 / (2 bandwidth^2)). An infinite bandwidth yields
/// constant features.
Matrix rff_features(const Matrix& x, std::size_t features, double bandwidth, Rng& rng);

/// Median pairwise Euclidean distance between rows (all pairs below 2000
/// rows, a fixed stride of pairs above).
double median_pairwise_distance(const Matrix& x);

struct HerdingResult {
  std::vector<std::size_t> order;   // indices into the feature rows, in pick order
  std::vector<double> discrepancy;  // |mean(selected) - mean(all)| after each pick
};

/// Greedy kernel herding: repeatedly adds the row whose inclusion brings the
/// selected feature mean closest to the mean of all rows. Ties go to the
/// lower tie_key.
HerdingResult kernel_herding(const Matrix& features, std::size_t count,
                             const std::vector<SampleId>& tie_key);

struct KernelOptions {
  std::size_t features = 1024;
  double bandwidth = 0.0;  // <= 0 selects the median heuristic
  bool global = false;
};

/// Kernel-mean matching selection on the latent rows. Per cluster unless
/// options.global, in which case a single herding pass over the whole
/// dataset keeps keep_count(n, pr) rows.
PruneSelection select_by_kernel(const LatentDataset& ds, const ClusterModel& model,
                                const std::vector<std::size_t>& quotas, const KernelOptions& options,
                                Rng& rng, double pr = std::numeric_limits<double>::quiet_NaN());

/// Gonzalez farthest-point traversal over unit rows, starting from `start`.
/// Returns indices in pick order. Ties go to the lower tie_key.
std::vector<std::size_t> farthest_point_traversal(const Matrix& unit, std::size_t start,
                                                  std::size_t count,
                                                  const std::vector<SampleId>& tie_key);

/// Farthest-point coreset under cosine distance in the selection space,
/// starting from the member nearest the centroid. The global variant runs one
/// traversal over the dataset starting nearest the normalized dataset mean.
PruneSelection select_by_coreset(const LatentDataset& ds, const ClusterModel& model,
                                 const std::vector<std::size_t>& quotas, bool global = false,
                                 double pr = std::numeric_limits<double>::quiet_NaN());

/// Keeps keep_count(n, pr) rows from the requested end of the score ranking;
/// ties by id. NaN scores are rejected.
PruneSelection select_by_score(const LatentDataset& ds, const std::vector<double>& scores, double pr,
                               ScoreDirection dir);

/// Uniform subset of keep_count(n, pr) rows without replacement.
PruneSelection select_random(const LatentDataset& ds, double pr, Rng& rng);

struct BalanceReport {
  double kl = 0.0;  // KL(p || uniform) over clusters
  std::size_t empty_clusters = 0;
};

BalanceReport balance_divergence(std::size_t k, const std::vector<std::size_t>& assignments);

/// Nearest-centroid cluster of each row of `points` (already in the
/// selection space of the model).
std::vector<std::size_t> assign_to_clusters(const ClusterModel& model, const Matrix& points);

}  // namespace lfm
