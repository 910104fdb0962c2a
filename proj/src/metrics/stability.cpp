#include "lfm/metrics/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "lfm/core/error.hpp"

namespace lfm {

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(v.size()));
  s.median = quantile(v, 0.5);
  s.p95 = quantile(v, 0.95);
  return s;
}

StabilityReport endpoint_similarity(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("endpoint similarity: shape mismatch");
  if (a.rows() == 0) throw ValidationError("endpoint similarity: no endpoints");
  const Vector na = a.rowwise().norm();
  const Vector nb = b.rowwise().norm();
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    if (!(na[r] > 0.0) || !(nb[r] > 0.0))
      throw ValidationError("endpoint similarity: zero-norm endpoint in row " + std::to_string(r));
  StabilityReport rep;
  const Eigen::Index m = a.rows();
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index s = (r + 1) % m;
    rep.matched.push_back(std::clamp(a.row(r).dot(b.row(r)) / (na[r] * nb[r]), -1.0, 1.0));
    rep.baseline.push_back(std::clamp(a.row(r).dot(b.row(s)) / (na[r] * nb[s]), -1.0, 1.0));
  }
  rep.matched_summary = summarize(rep.matched);
  rep.baseline_summary = summarize(rep.baseline);
  rep.gap = rep.matched_summary.mean - rep.baseline_summary.mean;
  return rep;
}

double assignment_agreement(const std::vector<Assignment>& a, const std::vector<Assignment>& b) {
  if (a.size() != b.size() || a.empty()) throw ValidationError("assignment agreement: size mismatch");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i].id == b[i].id ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(a.size());
}

StabilitySweep stability_sweep(const LatentDataset& full, const Matrix& sources, const Pruner& pruner,
                               const SweepOptions& opt) {
  if (sources.rows() == 0) throw ValidationError("stability sweep: no sources");
  const ClosedFormField full_field(full, opt.t_max);
  const double t_end = full_field.t_max();
  const auto m = static_cast<std::size_t>(sources.rows());
  const std::size_t paths = std::min(opt.path_sources, m);
  const auto pp = static_cast<Eigen::Index>(paths);

  std::vector<Matrix> full_states;
  const Matrix full_end = integrate_batch(full_field, sources, 0.0, t_end, opt.steps,
                                          [&](std::size_t, double, const Matrix& x) {
                                            full_states.push_back(x.topRows(pp));
                                          });
  const std::vector<Assignment> full_assign = assignments_at(full_field, full_end, t_end);
  const std::vector<double> times = time_grid(0.0, t_end, opt.steps);

  StabilitySweep sweep;
  sweep.full_assignments = full_assign;
  if (paths >= 2) {
    // Unrelated pairs: source i against source i + 1 under the same field.
    Matrix shifted(pp, sources.cols());
    PathDeviationAccumulator acc(paths);
    for (std::size_t k = 0; k < full_states.size(); ++k) {
      const Matrix& s = full_states[k];
      shifted.topRows(pp - 1) = s.bottomRows(pp - 1);
      shifted.row(pp - 1) = s.row(0);
      acc.add(times[k], s, shifted);
    }
    const Summary u = summarize(acc.values());
    sweep.unrelated_path_mean = u.mean;
    sweep.unrelated_path_median = u.median;
  }

  for (double pr : opt.prs) {
    const PruneSelection sel = pruner(pr);
    std::vector<std::size_t> rows;
    std::unordered_set<SampleId> kept_ids;
    for (std::size_t i = 0; i < sel.kept.size(); ++i)
      if (sel.kept[i]) {
        rows.push_back(i);
        kept_ids.insert(full.id(i));
      }
    if (rows.empty()) throw ValidationError("stability sweep: pruning removed every sample");
    const ClosedFormField field(full.subset(rows), opt.t_max);

    PathDeviationAccumulator acc(paths);
    const Matrix end = integrate_batch(field, sources, 0.0, t_end, opt.steps,
                                       [&](std::size_t k, double t, const Matrix& x) {
                                         if (paths > 0) acc.add(t, full_states[k], x.topRows(pp));
                                       });
    const std::vector<Assignment> assign = assignments_at(field, end, t_end);

    StabilityRow row;
    row.pr = pr;
    row.kept = rows.size();
    std::size_t unchanged = 0, unchanged_surv = 0;
    for (std::size_t s = 0; s < m; ++s) {
      const bool same = assign[s].id == full_assign[s].id;
      unchanged += same ? 1 : 0;
      if (kept_ids.count(full_assign[s].id) != 0) {
        ++row.survivors;
        unchanged_surv += same ? 1 : 0;
      }
    }
    row.unchanged_all = static_cast<double>(unchanged) / static_cast<double>(m);
    row.unchanged_conditioned =
        row.survivors == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(unchanged_surv) / static_cast<double>(row.survivors);
    row.path = summarize(acc.values());
    const StabilityReport sim = endpoint_similarity(full_end, end);
    row.similarity_mean = sim.matched_summary.mean;
    row.similarity_baseline = sim.baseline_summary.mean;
    sweep.rows.push_back(row);
  }
  return sweep;
}

}  // namespace lfm
