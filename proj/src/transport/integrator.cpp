#include "lfm/transport/integrator.hpp"

#include <algorithm>
#include <cmath>

#include "lfm/core/error.hpp"

namespace lfm {
namespace {

void check_range(const VelocityField& field, double t_start, double t_end, std::size_t steps) {
  if (steps == 0) throw ValidationError("integrate: steps must be at least 1");
  if (t_start == t_end) throw ValidationError("integrate: t_start equals t_end");
  const double lo = std::min(t_start, t_end);
  const double hi = std::max(t_start, t_end);
  if (!(lo >= 0.0) || hi > field.t_max())
    throw ValidationError("integrate: time range outside the valid range of field " +
                          field.tag());
}

}  // namespace

std::vector<double> time_grid(double t_start, double t_end, std::size_t steps) {
  std::vector<double> t(steps + 1);
  const double span = t_end - t_start;
  for (std::size_t k = 0; k <= steps; ++k)
    t[k] = t_start + span * (static_cast<double>(k) / static_cast<double>(steps));
  t[steps] = t_end;
  return t;
}

Trajectory integrate(const VelocityField& field, const Vector& x_start, double t_start,
                     double t_end, std::size_t steps) {
  check_range(field, t_start, t_end, steps);
  if (static_cast<std::size_t>(x_start.size()) != field.dim())
    throw ValidationError("integrate: start state has wrong dimension");

  Trajectory traj;
  traj.field_tag = field.tag();
  traj.times = time_grid(t_start, t_end, steps);
  traj.states.resize(static_cast<Eigen::Index>(steps + 1), x_start.size());
  traj.states.row(0) = x_start.transpose();

  Vector x = x_start;
  for (std::size_t k = 0; k < steps; ++k) {
    const double h = traj.times[k + 1] - traj.times[k];
    x += h * field.evaluate(x, traj.times[k]);
    if (!x.allFinite()) throw DivergenceError("integrate: non-finite state", k + 1);
    traj.states.row(static_cast<Eigen::Index>(k + 1)) = x.transpose();
  }
  return traj;
}

Matrix integrate_batch(const VelocityField& field, const Matrix& starts, double t_start,
                       double t_end, std::size_t steps, const BatchObserver& observer) {
  check_range(field, t_start, t_end, steps);
  return integrate_batch_grid(field, starts, time_grid(t_start, t_end, steps), observer);
}

Matrix integrate_batch_grid(const VelocityField& field, const Matrix& starts,
                            const std::vector<double>& times, const BatchObserver& observer) {
  if (times.size() < 2) throw ValidationError("integrate: grid needs at least two times");
  const bool forward = times.back() > times.front();
  for (std::size_t k = 1; k < times.size(); ++k)
    if ((times[k] > times[k - 1]) != forward || times[k] == times[k - 1])
      throw ValidationError("integrate: time grid is not strictly monotone");
  check_range(field, times.front(), times.back(), times.size() - 1);
  if (static_cast<std::size_t>(starts.cols()) != field.dim())
    throw ValidationError("integrate_batch: start states have wrong dimension");

  const std::size_t steps = times.size() - 1;
  Matrix x = starts;
  if (observer) observer(0, times[0], x);
  for (std::size_t k = 0; k < steps; ++k) {
    const double h = times[k + 1] - times[k];
    x += h * field.evaluate_batch(x, times[k]);
    if (!x.allFinite()) throw DivergenceError("integrate_batch: non-finite state", k + 1);
    if (observer) observer(k + 1, times[k + 1], x);
  }
  return x;
}

std::vector<Trajectory> integrate_all(const VelocityField& field, const Matrix& starts,
                                      double t_start, double t_end, std::size_t steps) {
  std::vector<Trajectory> out(static_cast<std::size_t>(starts.rows()));
  const std::vector<double> times = time_grid(t_start, t_end, steps);
  for (auto& tr : out) {
    tr.field_tag = field.tag();
    tr.times = times;
    tr.states.resize(static_cast<Eigen::Index>(steps + 1), starts.cols());
  }
  integrate_batch(field, starts, t_start, t_end, steps,
                  [&](std::size_t k, double, const Matrix& x) {
                    for (std::size_t i = 0; i < out.size(); ++i)
                      out[i].states.row(static_cast<Eigen::Index>(k)) =
                          x.row(static_cast<Eigen::Index>(i));
                  });
  return out;
}

}  // namespace lfm
