#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "lfm/core/dataset.hpp"
#include "lfm/core/types.hpp"
#include "lfm/pruning/selection.hpp"
#include "lfm/transport/analysis.hpp"

namespace lfm {

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  double median = 0.0;
  double p95 = 0.0;
};
Summary summarize(const std::vector<double>& values);
/// Linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

struct StabilityReport {
  std::vector<double> matched;   // cos(a_i, b_i)
  std::vector<double> baseline;  // cos(a_i, b_{(i+1) mod m})
  Summary matched_summary;
  Summary baseline_summary;
  double gap = 0.0;  // matched mean minus baseline mean
  double assignment_agreement = -1.0;  // fraction of equal assignments, -1 when not computed
};

/// Cosine similarity of matched endpoint rows against the index-shift
/// derangement baseline. Throws ValidationError on a zero-norm row.
StabilityReport endpoint_similarity(const Matrix& a, const Matrix& b);

/// Fraction of equal entries.
double assignment_agreement(const std::vector<Assignment>& a, const std::vector<Assignment>& b);

/// One pruning level of a stability sweep.
struct StabilityRow {
  double pr = 0.0;
  std::size_t kept = 0;
  std::size_t survivors = 0;          // sources whose full-field assignee was kept
  double unchanged_conditioned = 1.0; // among survivors, same assignee after pruning
  double unchanged_all = 1.0;         // among all sources
  Summary path;                       // path deviation against the full field
  double similarity_mean = 1.0;       // matched endpoint cosine similarity
  double similarity_baseline = 0.0;
};

struct StabilitySweep {
  std::vector<StabilityRow> rows;
  double unrelated_path_mean = 0.0;  // full-field path deviation between shifted source pairs
  double unrelated_path_median = 0.0;
  std::vector<Assignment> full_assignments;  // per source, under the full field
};

struct SweepOptions {
  std::vector<double> prs{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t steps = 20;
  double t_max = ClosedFormField::kDefaultTMax;  // closed-form fields integrate to this time
  /// Path deviations are computed for the first path_sources sources, whose
  /// full-field trajectories are kept in memory.
  std::size_t path_sources = 200;
};

/// Produces the retained subset for a pruning fraction.
using Pruner = std::function<PruneSelection(double pr)>;

/// Integrates every source under the full closed-form field once, then under
/// the field of each pruned subset, and compares assignments at t_max, path
/// deviations and endpoint similarity.
StabilitySweep stability_sweep(const LatentDataset& full, const Matrix& sources, const Pruner& pruner,
                               const SweepOptions& options);

}  // namespace lfm
