#include "lfm/pruning/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <string>

#include "lfm/core/error.hpp"

namespace lfm {

std::vector<std::size_t> ClusterModel::cluster_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t a : assignments) ++sizes[a];
  return sizes;
}

std::vector<std::vector<std::size_t>> ClusterModel::members() const {
  std::vector<std::vector<std::size_t>> out(k);
  for (std::size_t i = 0; i < assignments.size(); ++i) out[assignments[i]].push_back(i);
  return out;
}

Matrix normalize_rows(const Matrix& x) {
  Matrix out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double nrm = out.row(i).norm();
    if (!(nrm > 0.0) || !std::isfinite(nrm))
      throw ValidationError("embedding row " + std::to_string(i) + " has zero or non-finite norm");
    out.row(i) /= nrm;
  }
  return out;
}

double cosine_distance(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  return 1.0 - a.dot(b) / (a.norm() * b.norm());
}

namespace {

// Fills `assignments` and returns the mean cosine distance and change count.
std::pair<double, std::size_t> assign_points(const Matrix& unit, const Matrix& centroids,
                                             std::vector<std::size_t>& assignments,
                                             std::vector<double>& distance) {
  const Matrix sim = unit * centroids.transpose();
  std::size_t changes = 0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < sim.cols(); ++c)
      if (sim(i, c) > sim(i, best)) best = c;
    const auto ii = static_cast<std::size_t>(i);
    if (assignments[ii] != static_cast<std::size_t>(best)) ++changes;
    assignments[ii] = static_cast<std::size_t>(best);
    distance[ii] = 1.0 - sim(i, best);
    total += distance[ii];
  }
  return {total / static_cast<double>(sim.rows()), changes};
}

}  // namespace

ClusterModel kmeans_cosine(const Matrix& embeddings, std::size_t k, Rng& rng, std::size_t max_iters,
                           double tol) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  if (k == 0 || k > n) throw ValidationError("kmeans: k must lie in [1, n]");
  const Matrix unit = normalize_rows(embeddings);
  const auto kk = static_cast<Eigen::Index>(k);

  // k-means++ seeding with squared cosine distance.
  Matrix centroids(kk, unit.cols());
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.uniform_index(n);
  for (Eigen::Index c = 0; c < kk; ++c) {
    centroids.row(c) = unit.row(static_cast<Eigen::Index>(pick));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dist = std::max(0.0, 1.0 - unit.row(static_cast<Eigen::Index>(i)).dot(centroids.row(c)));
      nearest[i] = std::min(nearest[i], dist * dist);
      total += nearest[i];
    }
    if (c + 1 == kk) break;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < nearest[i]) {
          pick = i;
          break;
        }
        u -= nearest[i];
      }
    } else {
      // Every point coincides with a centroid; fall back to the next unused row.
      pick = static_cast<std::size_t>(c + 1);
    }
  }

  ClusterModel model;
  model.k = k;
  model.assignments.assign(n, k);  // k marks "unassigned" so the first pass counts as changes
  std::vector<double> distance(n, 0.0);
  auto [objective, changes] = assign_points(unit, centroids, model.assignments, distance);

  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    Matrix sums = Matrix::Zero(kk, unit.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(model.assignments[i])) += unit.row(static_cast<Eigen::Index>(i));
      ++counts[model.assignments[i]];
    }
    for (Eigen::Index c = 0; c < kk; ++c) {
      const double nrm = sums.row(c).norm();
      if (counts[static_cast<std::size_t>(c)] > 0 && nrm > 1e-12) {
        centroids.row(c) = sums.row(c) / nrm;
        continue;
      }
      // Empty (or degenerate) cluster: reseed at the point farthest from its centroid.
      const auto far = static_cast<std::size_t>(
          std::max_element(distance.begin(), distance.end()) - distance.begin());
      centroids.row(c) = unit.row(static_cast<Eigen::Index>(far));
      distance[far] = 0.0;
      ++model.reseeds;
    }
    const double previous = objective;
    std::tie(objective, changes) = assign_points(unit, centroids, model.assignments, distance);
    model.objective_history.push_back(objective);
    model.iterations = iter + 1;
    if (changes == 0) break;
    if (tol > 0.0 && previous - objective < tol) break;
  }
  model.centroids = std::move(centroids);
  return model;
}

}  // namespace lfm
