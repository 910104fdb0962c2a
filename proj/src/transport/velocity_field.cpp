#include "lfm/transport/velocity_field.hpp"

#include <string>

#include "lfm/core/error.hpp"

namespace lfm {

double fd_step(const Vector& x) { return 1e-4 * (1.0 + x.norm()); }

void VelocityField::check_time(double t) const {
  if (!(t >= 0.0) || t > t_max())
    throw ValidationError(tag() + ": time " + std::to_string(t) + " outside [0, " +
                          std::to_string(t_max()) + "]");
}

Matrix VelocityField::evaluate_batch(const Matrix& xs, double t) const {
  Matrix out(xs.rows(), xs.cols());
  for (Eigen::Index i = 0; i < xs.rows(); ++i) out.row(i) = evaluate(xs.row(i).transpose(), t).transpose();
  return out;
}

Vector VelocityField::jvp(const Vector& x, double t, const Vector& direction) const {
  const double dn = direction.norm();
  if (dn == 0.0) return Vector::Zero(x.size());
  const double eps = fd_step(x) / dn;
  const Vector plus = evaluate(x + eps * direction, t);
  const Vector minus = evaluate(x - eps * direction, t);
  return (plus - minus) / (2.0 * eps);
}

Vector VelocityField::vjp(const Vector& x, double t, const Vector& cotangent) const {
  const auto d = x.size();
  Vector out(d);
  for (Eigen::Index j = 0; j < d; ++j) out[j] = cotangent.dot(jvp(x, t, Vector::Unit(d, j)));
  return out;
}

}  // namespace lfm
