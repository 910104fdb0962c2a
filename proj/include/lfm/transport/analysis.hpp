#pragma once

#include <cstddef>
#include <vector>

#include "lfm/core/dataset.hpp"
#include "lfm/core/rng.hpp"
#include "lfm/transport/closed_form_field.hpp"
#include "lfm/transport/integrator.hpp"

namespace lfm {

/// Which training sample a trajectory ends on.
struct Assignment {
  SampleId id = 0;
  double weight = 0.0;  // softmax weight of the winner
  double margin = 0.0;  // winner weight minus runner-up weight
};

/// Reads the assignment of each row of `states` from the softmax weights at
/// time t. Ties go to the lowest sample id.
std::vector<Assignment> assignments_at(const ClosedFormField& field, const Matrix& states, double t);

/// Integrates every source from t = 0 to t_eval (in `steps` Euler steps) and
/// assigns it from the softmax weights at t_eval.
std::vector<Assignment> assign(const ClosedFormField& field, const Matrix& sources, std::size_t steps,
                               double t_eval);

/// Trapezoidal approximation of the time integral of |a(t) - b(t)|. Both
/// trajectories must share the same time grid.
double path_deviation(const Trajectory& a, const Trajectory& b);

/// Streaming form of path_deviation for batches integrated in lockstep.
class PathDeviationAccumulator {
 public:
  explicit PathDeviationAccumulator(std::size_t count) : total_(count, 0.0), last_(count, 0.0) {}

  /// Adds the pointwise distances of all pairs at time t. Times must be
  /// added in grid order.
  void add(double t, const Matrix& a, const Matrix& b);
  const std::vector<double>& values() const noexcept { return total_; }

 private:
  std::vector<double> total_;
  std::vector<double> last_;
  double last_t_ = 0.0;
  bool started_ = false;
};

struct DominanceEntry {
  SampleId id = 0;
  double frequency = 0.0;     // fraction of probes where the sample had the largest weight
  double cumulative = 0.0;    // running sum of softmax_mass in descending frequency order
  double softmax_mass = 0.0;  // mean softmax weight over all probes
};

/// Probes x_t = (1 - t) x0 + t x1 with x0 ~ N(0, I), x1 a uniformly drawn
/// dataset row and t ~ U(0, t_max), and counts how often each sample carries
/// the largest weight. Entries are sorted by descending frequency (ties by
/// id) and cover every sample. Mass is the softmax weight a sample carries,
/// accumulated in that order, so it sums to 1 even when probes < n.
std::vector<DominanceEntry> dominance_distribution(const ClosedFormField& field, std::size_t probes,
                                                   Rng& rng);

/// Fraction of total mass held by the top `fraction` of samples.
double top_share(const std::vector<DominanceEntry>& entries, double fraction);
/// Fraction of samples needed to reach the given cumulative mass.
double samples_for_mass(const std::vector<DominanceEntry>& entries, double mass);

}  // namespace lfm
