#include "lfm/pruning/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "lfm/core/error.hpp"

namespace lfm {
namespace {

void check_pr(double pr) {
  if (!(pr >= 0.0 && pr < 1.0)) throw ValidationError("pruning fraction must lie in [0, 1)");
}

PruneSelection blank_selection(const LatentDataset& ds, std::string criterion, double pr) {
  PruneSelection sel;
  sel.criterion = std::move(criterion);
  sel.pr = pr;
  sel.ids = ds.ids();
  sel.kept.assign(ds.size(), false);
  sel.scores.assign(ds.size(), std::numeric_limits<double>::quiet_NaN());
  sel.clusters.assign(ds.size(), -1);
  return sel;
}

void attach_clusters(PruneSelection& sel, const ClusterModel& model) {
  for (std::size_t i = 0; i < model.assignments.size(); ++i)
    sel.clusters[i] = static_cast<int>(model.assignments[i]);
}

// Members of each cluster listed in id order.
std::vector<std::vector<std::size_t>> members_by_id(const LatentDataset& ds, const ClusterModel& model) {
  if (model.assignments.size() != ds.size())
    throw ValidationError("cluster model does not match the dataset size");
  std::vector<std::vector<std::size_t>> out(model.k);
  for (std::size_t row : id_order(ds)) out[model.assignments[row]].push_back(row);
  return out;
}

void check_quotas(const std::vector<std::vector<std::size_t>>& members,
                  const std::vector<std::size_t>& quotas) {
  if (quotas.size() != members.size()) throw ValidationError("quota count does not match cluster count");
  for (std::size_t c = 0; c < quotas.size(); ++c)
    if (quotas[c] > members[c].size()) throw ValidationError("quota exceeds cluster size");
}

double pr_from_quotas(const std::vector<std::size_t>& quotas, std::size_t n, double pr) {
  if (!std::isnan(pr)) return pr;
  const auto kept = std::accumulate(quotas.begin(), quotas.end(), std::size_t{0});
  return 1.0 - static_cast<double>(kept) / static_cast<double>(n);
}

// Distributes `total` units proportionally to `weight`, capped by nothing,
// rounding by largest remainder (ties to the lower index).
std::vector<std::size_t> largest_remainder(const std::vector<double>& weight, std::size_t total) {
  const double sum = std::accumulate(weight.begin(), weight.end(), 0.0);
  std::vector<std::size_t> out(weight.size(), 0);
  if (total == 0 || sum <= 0.0) return out;
  std::vector<double> frac(weight.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    const double exact = static_cast<double>(total) * weight[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::vector<std::size_t> order(weight.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t j = 0; assigned < total; j = (j + 1) % order.size()) {
    if (weight[order[j]] <= 0.0) continue;
    ++out[order[j]];
    ++assigned;
  }
  return out;
}

}  // namespace

std::size_t PruneSelection::kept_count() const {
  return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), true));
}

std::vector<SampleId> PruneSelection::kept_ids() const {
  std::vector<SampleId> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (kept[i]) out.push_back(ids[i]);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> id_order(const LatentDataset& ds) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ds.id(a) < ds.id(b); });
  return order;
}

ClusterModel cluster_dataset(const LatentDataset& ds, std::size_t k, Rng& rng, std::size_t max_iters,
                             double tol) {
  const std::vector<std::size_t> order = id_order(ds);
  const Matrix& space = ds.selection_space();
  Matrix sorted(space.rows(), space.cols());
  for (std::size_t j = 0; j < order.size(); ++j)
    sorted.row(static_cast<Eigen::Index>(j)) = space.row(static_cast<Eigen::Index>(order[j]));
  ClusterModel model = kmeans_cosine(sorted, k, rng, max_iters, tol);
  std::vector<std::size_t> by_row(order.size());
  for (std::size_t j = 0; j < order.size(); ++j) by_row[order[j]] = model.assignments[j];
  model.assignments = std::move(by_row);
  return model;
}

std::size_t keep_count(std::size_t n, double pr) {
  check_pr(pr);
  const auto kept = static_cast<std::size_t>(std::llround((1.0 - pr) * static_cast<double>(n)));
  return std::min(kept, n);
}

std::vector<std::size_t> allocate_quota(const std::vector<std::size_t>& sizes, double pr, QuotaMode mode) {
  const std::size_t n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  const std::size_t total = keep_count(n, pr);
  const std::size_t k = sizes.size();
  if (k == 0) return {};

  if (mode == QuotaMode::proportional) {
    std::vector<double> w(sizes.begin(), sizes.end());
    return largest_remainder(w, total);
  }

  std::vector<std::size_t> quota(k, total / k);
  std::vector<std::size_t> by_size(k);
  std::iota(by_size.begin(), by_size.end(), std::size_t{0});
  std::stable_sort(by_size.begin(), by_size.end(), [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
  for (std::size_t j = 0; j < total % k; ++j) ++quota[by_size[j]];

  std::size_t deficit = 0;
  std::vector<double> capacity(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (quota[c] > sizes[c]) {
      deficit += quota[c] - sizes[c];
      quota[c] = sizes[c];
    } else {
      capacity[c] = static_cast<double>(sizes[c] - quota[c]);
    }
  }
  // Shares never exceed capacity: floor(D c / C) <= c and the +1 only lands
  // where the exact share has a fractional part.
  const std::vector<std::size_t> extra = largest_remainder(capacity, deficit);
  for (std::size_t c = 0; c < k; ++c) quota[c] += extra[c];
  return quota;
}

PruneSelection select_by_distance(const LatentDataset& ds, const ClusterModel& model,
                                  const std::vector<std::size_t>& quotas, DistanceDirection dir,
                                  double pr) {
  const auto members = members_by_id(ds, model);
  check_quotas(members, quotas);
  const bool near = dir == DistanceDirection::nearest;
  PruneSelection sel = blank_selection(ds, near ? "C_b" : "C_b^-1", pr_from_quotas(quotas, ds.size(), pr));
  attach_clusters(sel, model);
  const Matrix& space = ds.selection_space();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto c = static_cast<Eigen::Index>(model.assignments[i]);
    sel.scores[i] = 1.0 - space.row(ii).dot(model.centroids.row(c)) / space.row(ii).norm();
  }
  for (std::size_t c = 0; c < members.size(); ++c) {
    std::vector<std::size_t> rows = members[c];
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return near ? sel.scores[a] < sel.scores[b] : sel.scores[a] > sel.scores[b];
    });
    for (std::size_t j = 0; j < quotas[c]; ++j) sel.kept[rows[j]] = true;
  }
  return sel;
}

Matrix rff_features(const Matrix& x, std::size_t features, double bandwidth, Rng& rng) {
  if (features == 0) throw ValidationError("rff: feature count must be positive");
  if (!(bandwidth > 0.0)) throw ValidationError("rff: bandwidth must be positive");
  const auto dd = static_cast<Eigen::Index>(features);
  const double inv = std::isinf(bandwidth) ? 0.0 : 1.0 / bandwidth;
  Matrix w(x.cols(), dd);
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < dd; ++c) w(r, c) = rng.normal() * inv;
  Eigen::RowVectorXd b(dd);
  for (Eigen::Index c = 0; c < dd; ++c) b[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  Matrix z = x * w;
  z.rowwise() += b;
  return std::sqrt(2.0 / static_cast<double>(features)) * z.array().cos().matrix();
}

double median_pairwise_distance(const Matrix& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 2) return 0.0;
  std::vector<double> dist;
  constexpr std::size_t kExactLimit = 2000;
  if (n <= kExactLimit) {
    dist.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        dist.push_back((x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm());
  } else {
    // Pairs (i, i + s) for a few fixed strides keep the cost linear.
    for (std::size_t s : {std::size_t{1}, n / 3 + 1, n / 2 + 1, (2 * n) / 3 + 1})
      for (std::size_t i = 0; i < n; ++i)
        if (std::size_t j = (i + s) % n; j != i)
          dist.push_back((x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm());
  }
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  return *mid;
}

HerdingResult kernel_herding(const Matrix& z, std::size_t count, const std::vector<SampleId>& tie_key) {
  const auto m = static_cast<std::size_t>(z.rows());
  if (count > m) throw ValidationError("kernel herding: count exceeds the number of rows");
  if (tie_key.size() != m) throw ValidationError("kernel herding: tie key size mismatch");
  HerdingResult out;
  const Eigen::RowVectorXd mu = z.colwise().mean();
  const Vector sq = z.rowwise().squaredNorm();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(z.cols());
  std::vector<bool> used(m, false);
  for (std::size_t c = 0; c < count; ++c) {
    const double denom = static_cast<double>(c + 1);
    const Eigen::RowVectorXd a = sum / denom - mu;
    const Vector proj = z * a.transpose();
    std::size_t best = m;
    double best_score = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (used[i]) continue;
      const auto ii = static_cast<Eigen::Index>(i);
      const double score = 2.0 * proj[ii] / denom + sq[ii] / (denom * denom);
      if (best == m || score < best_score || (score == best_score && tie_key[i] < tie_key[best])) {
        best = i;
        best_score = score;
      }
    }
    used[best] = true;
    out.order.push_back(best);
    sum += z.row(static_cast<Eigen::Index>(best));
    out.discrepancy.push_back((sum / denom - mu).norm());
  }
  return out;
}

PruneSelection select_by_kernel(const LatentDataset& ds, const ClusterModel& model,
                                const std::vector<std::size_t>& quotas, const KernelOptions& options,
                                Rng& rng, double pr) {
  const auto members = members_by_id(ds, model);
  check_quotas(members, quotas);
  PruneSelection sel = blank_selection(ds, "C_b^k", pr_from_quotas(quotas, ds.size(), pr));
  attach_clusters(sel, model);

  auto herd = [&](const std::vector<std::size_t>& rows, std::size_t count) {
    Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.dim()));
    std::vector<SampleId> key(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) {
      x.row(static_cast<Eigen::Index>(j)) = ds.row(rows[j]);
      key[j] = ds.id(rows[j]);
    }
    double bw = options.bandwidth;
    if (!(bw > 0.0)) {
      bw = median_pairwise_distance(x);
      if (!(bw > 0.0)) bw = std::numeric_limits<double>::infinity();  // all rows coincide
    }
    const Matrix z = rff_features(x, options.features, bw, rng);
    const HerdingResult h = kernel_herding(z, count, key);
    for (std::size_t j : h.order) sel.kept[rows[j]] = true;
    return h.discrepancy.empty() ? 0.0 : h.discrepancy.back();
  };

  if (options.global) {
    const std::size_t total = std::accumulate(quotas.begin(), quotas.end(), std::size_t{0});
    sel.criterion = "C_b^k-global";
    sel.discrepancy.push_back(herd(id_order(ds), total));
    return sel;
  }
  for (std::size_t c = 0; c < members.size(); ++c)
    sel.discrepancy.push_back(members[c].empty() ? 0.0 : herd(members[c], quotas[c]));
  for (std::size_t i = 0; i < ds.size(); ++i)
    sel.scores[i] = sel.discrepancy[model.assignments[i]];
  return sel;
}

std::vector<std::size_t> farthest_point_traversal(const Matrix& unit, std::size_t start, std::size_t count,
                                                  const std::vector<SampleId>& tie_key) {
  const auto m = static_cast<std::size_t>(unit.rows());
  if (count > m) throw ValidationError("coreset: count exceeds the number of rows");
  std::vector<std::size_t> order;
  if (count == 0) return order;
  std::vector<double> gap(m, std::numeric_limits<double>::infinity());
  std::vector<bool> used(m, false);
  std::size_t next = start;
  while (true) {
    order.push_back(next);
    used[next] = true;
    if (order.size() == count) break;
    const Vector sim = unit * unit.row(static_cast<Eigen::Index>(next)).transpose();
    std::size_t best = m;
    for (std::size_t i = 0; i < m; ++i) {
      if (used[i]) continue;
      gap[i] = std::min(gap[i], 1.0 - sim[static_cast<Eigen::Index>(i)]);
      if (best == m || gap[i] > gap[best] || (gap[i] == gap[best] && tie_key[i] < tie_key[best])) best = i;
    }
    next = best;
  }
  return order;
}

PruneSelection select_by_coreset(const LatentDataset& ds, const ClusterModel& model,
                                 const std::vector<std::size_t>& quotas, bool global, double pr) {
  const auto members = members_by_id(ds, model);
  check_quotas(members, quotas);
  PruneSelection sel =
      blank_selection(ds, global ? "C_b^cs-global" : "C_b^cs", pr_from_quotas(quotas, ds.size(), pr));
  attach_clusters(sel, model);
  const Matrix unit_all = normalize_rows(ds.selection_space());

  auto traverse = [&](const std::vector<std::size_t>& rows, const Eigen::RowVectorXd& center,
                      std::size_t count) {
    Matrix unit(static_cast<Eigen::Index>(rows.size()), unit_all.cols());
    std::vector<SampleId> key(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) {
      unit.row(static_cast<Eigen::Index>(j)) = unit_all.row(static_cast<Eigen::Index>(rows[j]));
      key[j] = ds.id(rows[j]);
    }
    const Vector sim = unit * center.transpose();
    std::size_t start = 0;
    for (std::size_t j = 1; j < rows.size(); ++j)
      if (sim[static_cast<Eigen::Index>(j)] > sim[static_cast<Eigen::Index>(start)]) start = j;
    for (std::size_t j : farthest_point_traversal(unit, start, count, key)) sel.kept[rows[j]] = true;
  };

  if (global) {
    const std::size_t total = std::accumulate(quotas.begin(), quotas.end(), std::size_t{0});
    const std::vector<std::size_t> rows = id_order(ds);
    if (total > 0) traverse(rows, unit_all.colwise().mean(), total);
    return sel;
  }
  for (std::size_t c = 0; c < members.size(); ++c)
    if (quotas[c] > 0) traverse(members[c], model.centroids.row(static_cast<Eigen::Index>(c)), quotas[c]);
  return sel;
}

PruneSelection select_by_score(const LatentDataset& ds, const std::vector<double>& scores, double pr,
                               ScoreDirection dir) {
  if (scores.size() != ds.size()) throw ValidationError("score count does not match the dataset size");
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (std::isnan(scores[i])) throw ValidationError("score of sample " + std::to_string(ds.id(i)) + " is NaN");
  const bool high = dir == ScoreDirection::highest;
  PruneSelection sel = blank_selection(ds, high ? "score" : "score^-1", pr);
  sel.scores = scores;
  std::vector<std::size_t> rows = id_order(ds);
  std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    return high ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  const std::size_t keep = keep_count(ds.size(), pr);
  for (std::size_t j = 0; j < keep; ++j) sel.kept[rows[j]] = true;
  return sel;
}

PruneSelection select_random(const LatentDataset& ds, double pr, Rng& rng) {
  PruneSelection sel = blank_selection(ds, "random", pr);
  std::vector<std::size_t> rows = id_order(ds);
  const std::size_t keep = keep_count(ds.size(), pr);
  // Partial Fisher-Yates: the first `keep` slots form a uniform subset.
  for (std::size_t j = 0; j < keep; ++j) {
    const std::size_t pick = j + rng.uniform_index(rows.size() - j);
    std::swap(rows[j], rows[pick]);
    sel.kept[rows[j]] = true;
  }
  return sel;
}

BalanceReport balance_divergence(std::size_t k, const std::vector<std::size_t>& assignments) {
  if (assignments.empty()) throw ValidationError("balance divergence: no assignments");
  if (k == 0) throw ValidationError("balance divergence: k must be positive");
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t a : assignments) {
    if (a >= k) throw ValidationError("balance divergence: cluster index out of range");
    ++counts[a];
  }
  BalanceReport rep;
  const double total = static_cast<double>(assignments.size());
  for (std::size_t c : counts) {
    if (c == 0) {
      ++rep.empty_clusters;
      continue;
    }
    const double p = static_cast<double>(c) / total;
    rep.kl += p * std::log(p * static_cast<double>(k));
  }
  return rep;
}

std::vector<std::size_t> assign_to_clusters(const ClusterModel& model, const Matrix& points) {
  if (points.cols() != model.centroids.cols())
    throw ValidationError("cluster assignment: dimension mismatch");
  const Matrix sim = normalize_rows(points) * model.centroids.transpose();
  std::vector<std::size_t> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index r = 0; r < sim.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < sim.cols(); ++c)
      if (sim(r, c) > sim(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = static_cast<std::size_t>(best);
  }
  return out;
}

}  // namespace lfm
