#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lfm/pruning/selection.hpp"

namespace lfm {

enum class Criterion {
  random,
  cluster_proportional,          // C_p
  cluster_balanced,              // C_b
  cluster_proportional_inverse,  // C_p^-1
  cluster_balanced_inverse,      // C_b^-1
  cluster_kernel,                // C_b^k
  cluster_coreset,               // C_b^cs
  gradient,                      // G
  gradient_inverse,              // G^-1
  loss,                          // L
  loss_inverse,                  // L^-1
};

/// Accepts the short tags (random, C_p, C_b, C_p^-1, C_b^-1, C_b^k, C_b^cs,
/// G, G^-1, L, L^-1) and their unicode spellings. Throws ConfigError.
Criterion parse_criterion(std::string_view tag);
std::string criterion_tag(Criterion c);
bool needs_clusters(Criterion c);
bool needs_scores(Criterion c);

struct PruneOptions {
  Criterion criterion = Criterion::random;
  double pr = 0.5;
  std::size_t k = 24;
  std::size_t kmeans_iters = 100;
  std::optional<QuotaMode> mode;                // overrides the criterion's default
  std::optional<DistanceDirection> direction;   // overrides the criterion's default
  bool global = false;                          // kernel / coreset only
  KernelOptions kernel;
};

/// Runs one criterion end to end. Clustering criteria cluster the dataset
/// with a stream derived from rng; score criteria read `scores` (aligned with
/// dataset rows; highest kept for G and L, lowest for the inverses).
PruneSelection prune(const LatentDataset& ds, const PruneOptions& options, Rng& rng,
                     const std::vector<double>* scores = nullptr,
                     const ClusterModel* clusters = nullptr);

}  // namespace lfm
