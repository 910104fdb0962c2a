#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "lfm/core/types.hpp"
#include "lfm/transport/velocity_field.hpp"

namespace lfm {

/// Ordered (t, state) pairs produced by integrating a field.
struct Trajectory {
  std::vector<double> times;
  Matrix states;  // one row per entry of times
  std::string field_tag;

  std::size_t size() const noexcept { return times.size(); }
  Vector endpoint() const { return states.row(states.rows() - 1).transpose(); }
  Vector state(std::size_t k) const { return states.row(static_cast<Eigen::Index>(k)).transpose(); }
};

/// t_k = t_start + (t_end - t_start) k / steps for k = 0..steps; the last
/// entry is t_end exactly.
std::vector<double> time_grid(double t_start, double t_end, std::size_t steps);

/// Fixed-step explicit Euler, x_{k+1} = x_k + (t_{k+1} - t_k) v(x_k, t_k).
/// t_end may be smaller than t_start (backward integration). Throws
/// DivergenceError carrying the step index if a state becomes non-finite.
Trajectory integrate(const VelocityField& field, const Vector& x_start, double t_start,
                     double t_end, std::size_t steps);

/// Called after every step of integrate_batch with the step index k (0 for the
/// initial state), the time t_k and the m x d matrix of states at t_k.
using BatchObserver = std::function<void(std::size_t, double, const Matrix&)>;

/// Euler integration of every row of `starts` in lockstep, using the field's
/// batch evaluation. Returns the final states. States are only exposed
/// through the observer so that large batches need not be stored.
Matrix integrate_batch(const VelocityField& field, const Matrix& starts, double t_start,
                       double t_end, std::size_t steps, const BatchObserver& observer = {});

/// Euler integration over an explicit, strictly monotone time grid.
Matrix integrate_batch_grid(const VelocityField& field, const Matrix& starts,
                            const std::vector<double>& times, const BatchObserver& observer = {});

/// Same as integrate_batch but records every row's full trajectory.
std::vector<Trajectory> integrate_all(const VelocityField& field, const Matrix& starts,
                                      double t_start, double t_end, std::size_t steps);

}  // namespace lfm
