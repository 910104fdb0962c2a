#include "lfm/transport/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lfm/core/error.hpp"

namespace lfm {

std::vector<Assignment> assignments_at(const ClosedFormField& field, const Matrix& states, double t) {
  const Matrix w = field.softmax_weights_batch(states, t);
  const auto& ids = field.dataset().ids();
  std::vector<Assignment> out(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    Eigen::Index best = 0;
    double runner = -1.0;
    for (Eigen::Index i = 1; i < w.cols(); ++i) {
      const double wi = w(r, i);
      const double wb = w(r, best);
      if (wi > wb || (wi == wb && ids[static_cast<std::size_t>(i)] < ids[static_cast<std::size_t>(best)])) {
        runner = std::max(runner, wb);
        best = i;
      } else {
        runner = std::max(runner, wi);
      }
    }
    auto& a = out[static_cast<std::size_t>(r)];
    a.id = ids[static_cast<std::size_t>(best)];
    a.weight = w(r, best);
    a.margin = runner < 0.0 ? a.weight : a.weight - runner;
  }
  return out;
}

std::vector<Assignment> assign(const ClosedFormField& field, const Matrix& sources, std::size_t steps,
                               double t_eval) {
  if (!(t_eval > 0.0) || t_eval > field.t_max())
    throw ValidationError("assign: t_eval must lie in (0, t_max]");
  const Matrix end = integrate_batch(field, sources, 0.0, t_eval, steps);
  return assignments_at(field, end, t_eval);
}

double path_deviation(const Trajectory& a, const Trajectory& b) {
  if (a.times != b.times) throw ValidationError("path_deviation: trajectories use different time grids");
  if (a.states.cols() != b.states.cols())
    throw ValidationError("path_deviation: trajectories have different dimensions");
  if (a.size() < 2) throw ValidationError("path_deviation: need at least two states");
  double total = 0.0;
  double prev = (a.states.row(0) - b.states.row(0)).norm();
  for (std::size_t k = 1; k < a.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double cur = (a.states.row(kk) - b.states.row(kk)).norm();
    total += 0.5 * (prev + cur) * std::abs(a.times[k] - a.times[k - 1]);
    prev = cur;
  }
  return total;
}

void PathDeviationAccumulator::add(double t, const Matrix& a, const Matrix& b) {
  if (static_cast<std::size_t>(a.rows()) != total_.size() || a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("path deviation: batch shape mismatch");
  for (std::size_t i = 0; i < total_.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double cur = (a.row(ii) - b.row(ii)).norm();
    if (started_) total_[i] += 0.5 * (last_[i] + cur) * std::abs(t - last_t_);
    last_[i] = cur;
  }
  last_t_ = t;
  started_ = true;
}

std::vector<DominanceEntry> dominance_distribution(const ClosedFormField& field, std::size_t probes,
                                                   Rng& rng) {
  if (probes == 0) throw ValidationError("dominance: probes must be positive");
  const LatentDataset& ds = field.dataset();
  const std::size_t n = ds.size();
  const auto d = static_cast<Eigen::Index>(ds.dim());
  std::vector<double> wins(n, 0.0);
  std::vector<double> mass(n, 0.0);
  constexpr std::size_t kChunk = 256;

  for (std::size_t start = 0; start < probes; start += kChunk) {
    const auto m = static_cast<Eigen::Index>(std::min(kChunk, probes - start));
    Matrix xs(m, d);
    Vector ts(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto target = static_cast<Eigen::Index>(rng.uniform_index(n));
      const double t = rng.uniform() * field.t_max();
      ts[r] = t;
      for (Eigen::Index j = 0; j < d; ++j) xs(r, j) = (1.0 - t) * rng.normal();
      xs.row(r) += t * ds.data().row(target);
    }
    const Matrix w = field.softmax_weights_batch(xs, ts);
    for (Eigen::Index r = 0; r < m; ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < w.cols(); ++i) {
        if (w(r, i) > w(r, best) || (w(r, i) == w(r, best) && ds.id(static_cast<std::size_t>(i)) <
                                                                 ds.id(static_cast<std::size_t>(best))))
          best = i;
      }
      wins[static_cast<std::size_t>(best)] += 1.0;
      for (Eigen::Index i = 0; i < w.cols(); ++i) mass[static_cast<std::size_t>(i)] += w(r, i);
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (wins[a] != wins[b]) return wins[a] > wins[b];
    return ds.id(a) < ds.id(b);
  });
  const double total = static_cast<double>(probes);
  std::vector<DominanceEntry> out(n);
  double cum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    out[k].id = ds.id(i);
    out[k].frequency = wins[i] / total;
    out[k].softmax_mass = mass[i] / total;
    cum += out[k].softmax_mass;
    out[k].cumulative = cum;
  }
  return out;
}

double top_share(const std::vector<DominanceEntry>& entries, double fraction) {
  if (entries.empty()) return 0.0;
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(entries.size()) - 1e-9)));
  return entries[std::min(k, entries.size()) - 1].cumulative;
}

double samples_for_mass(const std::vector<DominanceEntry>& entries, double mass) {
  for (std::size_t k = 0; k < entries.size(); ++k)
    if (entries[k].cumulative >= mass - 1e-12)
      return static_cast<double>(k + 1) / static_cast<double>(entries.size());
  return 1.0;
}

}  // namespace lfm
