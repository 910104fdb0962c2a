#pragma once

#include <cstddef>
#include <string>

#include "lfm/core/types.hpp"

namespace lfm {

/// A time-dependent velocity field v(x, t) on R^d.
class VelocityField {
 public:
  virtual ~VelocityField() = default;

  virtual std::size_t dim() const = 0;
  /// Largest time at which evaluation is allowed.
  virtual double t_max() const { return 1.0; }
  virtual std::string tag() const = 0;

  virtual Vector evaluate(const Vector& x, double t) const = 0;
  /// Row-wise evaluation of a batch of states. The default loops over rows.
  virtual Matrix evaluate_batch(const Matrix& xs, double t) const;

  /// Jacobian-vector product J(x,t) * direction. The default uses central
  /// differences with step 1e-4 * (1 + |x|) scaled by 1/|direction|.
  virtual Vector jvp(const Vector& x, double t, const Vector& direction) const;
  /// Transposed product J(x,t)^T * cotangent. The default assembles J
  /// column by column from jvp, costing d evaluations pairs.
  virtual Vector vjp(const Vector& x, double t, const Vector& cotangent) const;

 protected:
  void check_time(double t) const;
};

/// Central-difference step used by the default jvp.
double fd_step(const Vector& x);

}  // namespace lfm
