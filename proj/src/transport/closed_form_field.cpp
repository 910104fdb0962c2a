#include "lfm/transport/closed_form_field.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "lfm/core/error.hpp"

namespace lfm {
namespace {

// Exponent refinement: rows whose estimated rounding error exceeds
// kRefineTolerance are recomputed when at most kCheapRefine entries are within
// kRefineWindow of the maximum, and unconditionally above kForceRefine.
constexpr double kRefineTolerance = 1e-12;  // nats
constexpr double kForceRefine = 1e-6;       // nats
constexpr Eigen::Index kCheapRefine = 64;
constexpr double kRefineWindow = 50.0;  // nats below the row maximum
// Weights below this are dropped from the sparse velocity accumulation.
constexpr double kWeightCutoff = 1e-20;
// Exponents this far below the row maximum give weight exactly 0 instead of
// a subnormal, which would slow the dense product by orders of magnitude.
constexpr double kUnderflow = 700.0;

}  // namespace

ClosedFormField::ClosedFormField(LatentDataset dataset, double t_max)
    : dataset_(std::move(dataset)), t_max_(t_max) {
  if (!(t_max > 0.0 && t_max < 1.0))
    throw ValidationError("closed-form field: t_max must lie in (0, 1)");
  sq_norms_ = dataset_.data().rowwise().squaredNorm();
}

Matrix ClosedFormField::exponents_batch(const Matrix& xs, const Vector& ts) const {
  if (static_cast<std::size_t>(xs.cols()) != dim())
    throw ValidationError("closed-form field: state dimension mismatch");
  if (ts.size() != xs.rows()) throw ValidationError("closed-form field: one time per row required");
  if (!xs.allFinite()) throw ValidationError("closed-form field: non-finite state");
  for (Eigen::Index r = 0; r < ts.size(); ++r) check_time(ts[r]);

  const Matrix& data = dataset_.data();
  const Vector x_sq = xs.rowwise().squaredNorm();
  const Vector inv = (2.0 * (1.0 - ts.array()).square()).inverse().matrix();

  Matrix e = xs * data.transpose();
  for (Eigen::Index r = 0; r < e.rows(); ++r) {
    const double t = ts[r];
    e.row(r) = ((2.0 * t) * e.row(r) - (t * t) * sq_norms_.transpose()).array() - x_sq[r];
    e.row(r) *= inv[r];
  }

  // Rounding of the inner-product and norm terms of the identity, beyond what
  // the explicit difference itself incurs, with the sqrt(d) growth typical of
  // blocked dot products.
  const double eps = std::numeric_limits<double>::epsilon();
  const double max_norm = std::sqrt(sq_norms_.maxCoeff());
  const double root_d = std::sqrt(static_cast<double>(dim()));
  for (Eigen::Index r = 0; r < xs.rows(); ++r) {
    const double t = ts[r];
    const double bound =
        4.0 * eps * root_d * (2.0 * t * std::sqrt(x_sq[r]) * max_norm + t * t * max_norm * max_norm) * inv[r];
    if (bound <= kRefineTolerance) continue;
    auto row = e.row(r);
    const double cut = row.maxCoeff() - kRefineWindow - 2.0 * bound;
    const auto candidates = (row.array() >= cut).count();
    if (candidates > kCheapRefine && bound <= kForceRefine) continue;
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      if (row[i] < cut) continue;
      row[i] = -(xs.row(r) - t * data.row(i)).squaredNorm() * inv[r];
    }
  }
  return e;
}

Matrix ClosedFormField::softmax_weights_batch(const Matrix& xs, const Vector& ts) const {
  Matrix w = exponents_batch(xs, ts);
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    auto row = w.row(r);
    const double top = row.maxCoeff();
    row.array() = (row.array() - top).unaryExpr([](double v) { return v < -kUnderflow ? 0.0 : std::exp(v); });
    row /= row.sum();
  }
  return w;
}

Matrix ClosedFormField::softmax_weights_batch(const Matrix& xs, double t) const {
  return softmax_weights_batch(xs, Vector::Constant(xs.rows(), t));
}

Vector ClosedFormField::softmax_weights(const Vector& x, double t) const {
  return softmax_weights_batch(x.transpose(), t).row(0).transpose();
}

Matrix ClosedFormField::combine(const Matrix& weights, const Matrix& xs, double t) const {
  const Matrix& data = dataset_.data();
  const double scale = 1.0 / (1.0 - t);

  Eigen::Index nnz = 0;
  for (Eigen::Index r = 0; r < weights.rows(); ++r)
    nnz += (weights.row(r).array() >= kWeightCutoff).count();

  Matrix out;
  if (nnz * 4 > weights.size()) {
    out = weights * data;
  } else {
    out = Matrix::Zero(xs.rows(), xs.cols());
    for (Eigen::Index r = 0; r < weights.rows(); ++r) {
      for (Eigen::Index i = 0; i < weights.cols(); ++i) {
        const double w = weights(r, i);
        if (w >= kWeightCutoff) out.row(r).noalias() += w * data.row(i);
      }
    }
  }
  out -= xs;
  out *= scale;
  return out;
}

Matrix ClosedFormField::evaluate_batch(const Matrix& xs, double t) const {
  return combine(softmax_weights_batch(xs, t), xs, t);
}

Vector ClosedFormField::evaluate(const Vector& x, double t) const {
  return evaluate_batch(x.transpose(), t).row(0).transpose();
}

Vector ClosedFormField::jvp(const Vector& x, double t, const Vector& direction) const {
  if (direction.size() != x.size()) throw ValidationError("closed-form field: direction dimension mismatch");
  const Matrix& data = dataset_.data();
  const Vector w = softmax_weights(x, t);
  const Vector mean = data.transpose() * w;
  // Weighted covariance applied to the direction: sum_i c_i (x^i - mean).
  const Vector c = w.cwiseProduct(data * direction - Vector::Constant(w.size(), mean.dot(direction)));
  const Vector cov_u = data.transpose() * c - c.sum() * mean;
  const double a = 1.0 - t;
  return (t / (a * a)) * cov_u / a - direction / a;
}

}  // namespace lfm
