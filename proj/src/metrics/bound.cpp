#include "lfm/metrics/bound.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "lfm/core/error.hpp"
#include "lfm/metrics/stability.hpp"
#include "lfm/transport/integrator.hpp"

namespace lfm {

LipschitzEstimate lipschitz_estimate(const VelocityField& field, const Matrix& probes, double t, std::size_t iters,
                                     Rng& rng, double tol) {
  if (iters == 0) throw ValidationError("lipschitz: iters must be positive");
  if (probes.rows() == 0) throw ValidationError("lipschitz: no probes");
  LipschitzEstimate est;
  for (Eigen::Index r = 0; r < probes.rows(); ++r) {
    const Vector x = probes.row(r).transpose();
    Vector v(x.size());
    for (auto& c : v) c = rng.normal();
    v.normalize();
    double sigma = 0.0, previous = 0.0;
    for (std::size_t k = 0; k < iters; ++k) {
      const Vector u = field.jvp(x, t, v);
      previous = sigma;
      sigma = u.norm();
      const Vector w = field.vjp(x, t, u);
      const double nw = w.norm();
      if (!(nw > 0.0) || !std::isfinite(nw)) break;  // J v = 0: sigma stays at |J v|
      v = w / nw;
    }
    sigma = field.jvp(x, t, v).norm();
    if (iters > 1 && std::abs(sigma - previous) > tol * std::max(sigma, 1e-300)) est.converged = false;
    est.per_probe.push_back(sigma);
  }
  est.value = quantile(est.per_probe, 0.5);
  return est;
}

Matrix interpolation_probes(const LatentDataset& ds, std::size_t count, double t, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(ds.dim());
  Matrix x(static_cast<Eigen::Index>(count), d);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto target = static_cast<Eigen::Index>(rng.uniform_index(ds.size()));
    for (Eigen::Index j = 0; j < d; ++j) x(r, j) = (1.0 - t) * rng.normal();
    x.row(r) += t * ds.data().row(target);
  }
  return x;
}

double trapezoid(const std::vector<double>& t, const std::vector<double>& y) {
  if (t.size() != y.size()) throw ValidationError("trapezoid: size mismatch");
  double s = 0.0;
  for (std::size_t k = 1; k < t.size(); ++k) s += 0.5 * (y[k] + y[k - 1]) * (t[k] - t[k - 1]);
  return s;
}

std::vector<double> bound_grid(double t_max, std::size_t points) {
  if (points < 2) throw ValidationError("bound grid: need at least two points");
  return time_grid(0.0, t_max, points - 1);
}

LipschitzProfile lipschitz_profile(const VelocityField& field, const LatentDataset& ds,
                                   const std::vector<double>& times, std::size_t probes, std::size_t iters,
                                   Rng& rng) {
  LipschitzProfile prof;
  prof.times = times;
  for (double t : times) {
    const Matrix x = interpolation_probes(ds, probes, t, rng);
    const LipschitzEstimate e = lipschitz_estimate(field, x, t, iters, rng);
    prof.values.push_back(e.value);
    prof.converged = prof.converged && e.converged;
  }
  prof.integral = trapezoid(prof.times, prof.values);
  prof.exp_factor = std::exp(prof.integral);
  return prof;
}

VelocityError velocity_error(const VelocityField& field, const ClosedFormField& reference, const LatentDataset& ds_val,
                             const std::vector<double>& times, std::size_t probes_per_t, Rng& rng) {
  if (times.size() < 2) throw ValidationError("velocity error: need at least two times");
  if (probes_per_t == 0) throw ValidationError("velocity error: probes_per_t must be positive");
  if (field.dim() != reference.dim() || ds_val.dim() != reference.dim())
    throw ValidationError("velocity error: dimension mismatch");
  const auto& ref_ids = reference.dataset().ids();
  const std::unordered_set<SampleId> train(ref_ids.begin(), ref_ids.end());
  for (SampleId id : ds_val.ids())
    if (train.count(id) != 0)
      throw ValidationError("velocity error: validation sample " + std::to_string(id) + " is in the reference dataset");

  VelocityError out;
  out.times = times;
  for (double t : times) {
    if (!(t >= 0.0) || t > reference.t_max()) throw ValidationError("velocity error: times must lie in [0, t_max]");
    const Matrix x = interpolation_probes(ds_val, probes_per_t, t, rng);
    const Matrix diff = field.evaluate_batch(x, t) - reference.evaluate_batch(x, t);
    out.mean_sq.push_back(diff.squaredNorm() / static_cast<double>(probes_per_t));
  }
  const double span = times.back() - times.front();
  out.epsilon = std::sqrt(std::max(0.0, trapezoid(times, out.mean_sq) / span));
  return out;
}

BoundReport w2_bound(double exp_factor, double epsilon) {
  if (!(exp_factor >= 0.0) || !(epsilon >= 0.0)) throw ValidationError("w2 bound: inputs must be non-negative");
  BoundReport rep;
  rep.exp_factor = exp_factor;
  rep.epsilon = epsilon;
  // A zero error bounds the distance by zero even when the exponential
  // factor overflowed.
  rep.bound = epsilon == 0.0 ? 0.0 : exp_factor * epsilon;
  return rep;
}

double combine_triangle(double bound_i, double bound_j) {
  if (!(bound_i >= 0.0) || !(bound_j >= 0.0)) throw ValidationError("triangle: bounds must be non-negative");
  return bound_i + bound_j;
}

}  // namespace lfm
