#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "lfm/core/dataset.hpp"
#include "lfm/core/rng.hpp"
#include "lfm/transport/closed_form_field.hpp"
#include "lfm/transport/velocity_field.hpp"

namespace lfm {

struct LipschitzEstimate {
  double value = 0.0;               // median over probes
  std::vector<double> per_probe;
  bool converged = true;            // every probe's last relative change below tol
};

/// Spectral norm of the x-Jacobian of the field at each probe row by power
/// iteration on J^T J (one jvp and one vjp per iteration), then the median
/// over probes.
LipschitzEstimate lipschitz_estimate(const VelocityField& field, const Matrix& probes, double t,
                                     std::size_t iters, Rng& rng, double tol = 1e-3);

/// x_t = (1 - t) x0 + t x1 with x0 ~ N(0, I) and x1 drawn uniformly from ds.
Matrix interpolation_probes(const LatentDataset& ds, std::size_t count, double t, Rng& rng);

struct LipschitzProfile {
  std::vector<double> times;
  std::vector<double> values;  // L_t per time
  double integral = 0.0;       // trapezoidal integral of L_t
  double exp_factor = 1.0;     // exp(integral)
  bool converged = true;
};

/// L_t on the given grid with probes from interpolation_probes(ds, ...).
LipschitzProfile lipschitz_profile(const VelocityField& field, const LatentDataset& ds,
                                   const std::vector<double>& times, std::size_t probes,
                                   std::size_t iters, Rng& rng);

struct VelocityError {
  std::vector<double> times;
  std::vector<double> mean_sq;  // E|v - v*|^2 per time
  double epsilon = 0.0;
};

/// Root of the time-averaged squared velocity error against the closed-form
/// field on interpolation points built from ds_val. The trapezoidal integral
/// is divided by the grid span, so a constant error c gives epsilon = |c|
/// on any grid. Throws ValidationError when ds_val shares ids with the
/// reference dataset.
VelocityError velocity_error(const VelocityField& field, const ClosedFormField& reference,
                             const LatentDataset& ds_val, const std::vector<double>& times,
                             std::size_t probes_per_t, Rng& rng);

struct BoundReport {
  double exp_factor = 1.0;
  double epsilon = 0.0;
  double bound = 0.0;  // exp_factor * epsilon
  LipschitzProfile lipschitz;
  VelocityError error;
};

/// W2 <= exp(int L_t dt) * epsilon.
BoundReport w2_bound(double exp_factor, double epsilon);
/// Bound between two learned flows via the true flow: b_i + b_j.
double combine_triangle(double bound_i, double bound_j);

/// Uniform grid of `points` times on [0, t_max].
std::vector<double> bound_grid(double t_max, std::size_t points = 11);

double trapezoid(const std::vector<double>& times, const std::vector<double>& values);

}  // namespace lfm
