#include "lfm/surrogate/model.hpp"

#include <cmath>

#include "lfm/core/error.hpp"

namespace lfm {
namespace {

using ConstMap = Eigen::Map<const Matrix>;

Matrix silu(const Matrix& z) {
  return (z.array() / (1.0 + (-z.array()).exp())).matrix();
}

Matrix silu_prime(const Matrix& z) {
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
  return (s * (1.0 + z.array() * (1.0 - s))).matrix();
}

}  // namespace

std::size_t SurrogateArch::default_width(std::size_t dim) {
  if (dim <= 2048) return 256;
  return ((dim / 8 + 63) / 64) * 64;
}

SurrogateArch SurrogateArch::default_arch(std::size_t dim) {
  SurrogateArch a;
  a.dim = dim;
  const std::size_t w = default_width(dim);
  a.hidden = {w, w, w};
  return a;
}

std::vector<std::size_t> SurrogateArch::widths() const {
  std::vector<std::size_t> w{input_width()};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(dim);
  return w;
}

void SurrogateArch::validate() const {
  if (dim == 0) throw ConfigError("surrogate: dim must be positive");
  if (time_embedding % 2 != 0) throw ConfigError("surrogate: time embedding width must be even");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("surrogate: hidden widths must be positive");
}

SurrogateModel::SurrogateModel(SurrogateArch arch, Rng& init, double ema_decay) : arch_(std::move(arch)) {
  arch_.validate();
  build_offsets();
  set_ema_decay(ema_decay);
  params_ = Vector::Zero(static_cast<Eigen::Index>(offsets_.back()));
  const auto w = arch_.widths();
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(w[l]));
    for (std::size_t k = 0; k < w[l] * w[l + 1]; ++k)
      params_[static_cast<Eigen::Index>(offsets_[l] + k)] = scale * init.normal();
  }
  ema_ = params_;
}

SurrogateModel::SurrogateModel(SurrogateArch arch, Vector params, Vector ema, double ema_decay)
    : arch_(std::move(arch)), params_(std::move(params)), ema_(std::move(ema)) {
  arch_.validate();
  build_offsets();
  set_ema_decay(ema_decay);
  const auto count = static_cast<Eigen::Index>(offsets_.back());
  if (params_.size() != count || ema_.size() != count)
    throw ValidationError("surrogate: parameter vector does not match the architecture");
}

void SurrogateModel::build_offsets() {
  const auto w = arch_.widths();
  offsets_.assign(1, 0);
  for (std::size_t l = 0; l + 1 < w.size(); ++l) offsets_.push_back(offsets_.back() + w[l + 1] * (w[l] + 1));
}

void SurrogateModel::set_ema_decay(double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ConfigError("surrogate: ema decay must lie in [0, 1]");
  ema_decay_ = decay;
}

void SurrogateModel::update_ema() {
  if (ema_decay_ == 0.0) {
    ema_ = params_;
  } else if (ema_decay_ < 1.0) {
    ema_ = ema_decay_ * ema_ + (1.0 - ema_decay_) * params_;
  }
}

Matrix SurrogateModel::input(const Matrix& xs, const Vector& ts) const {
  if (static_cast<std::size_t>(xs.cols()) != arch_.dim) throw ValidationError("surrogate: input has wrong dimension");
  if (ts.size() != xs.rows()) throw ValidationError("surrogate: one time per row required");
  const auto d = xs.cols();
  Matrix in(xs.rows(), static_cast<Eigen::Index>(arch_.input_width()));
  in.leftCols(d) = xs;
  if (arch_.time_embedding == 0) {
    in.col(d) = ts;
    return in;
  }
  const auto half = static_cast<Eigen::Index>(arch_.time_embedding / 2);
  for (Eigen::Index j = 0; j < half; ++j) {
    // Frequencies spaced geometrically over [1, 100].
    const double freq = half == 1 ? 1.0 : std::pow(100.0, static_cast<double>(j) / static_cast<double>(half - 1));
    in.col(d + j) = (freq * ts.array()).sin().matrix();
    in.col(d + half + j) = (freq * ts.array()).cos().matrix();
  }
  return in;
}

ForwardCache SurrogateModel::forward(const Vector& theta, const Matrix& xs, const Vector& ts) const {
  const auto w = arch_.widths();
  ForwardCache c;
  c.post.push_back(input(xs, ts));
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(w[l]);
    const auto out = static_cast<Eigen::Index>(w[l + 1]);
    const ConstMap W(theta.data() + offsets_[l], out, in);
    const Eigen::Map<const Eigen::RowVectorXd> b(theta.data() + offsets_[l] + w[l] * w[l + 1], out);
    Matrix z = c.post.back() * W.transpose();
    z.rowwise() += b;
    const bool last = l + 2 == w.size();
    c.post.push_back(last ? z : silu(z));
    c.pre.push_back(std::move(z));
  }
  if (!c.output().allFinite()) throw DivergenceError("surrogate: non-finite activations", 0);
  return c;
}

Matrix SurrogateModel::evaluate(const Vector& theta, const Matrix& xs, const Vector& ts) const {
  return forward(theta, xs, ts).output();
}

Matrix SurrogateModel::backward(const Vector& theta, const ForwardCache& cache, const Matrix& d_output,
                                Vector* grad) const {
  const auto w = arch_.widths();
  Matrix dz = d_output;
  Matrix dh;
  for (std::size_t l = w.size() - 1; l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(w[l]);
    const auto out = static_cast<Eigen::Index>(w[l + 1]);
    const ConstMap W(theta.data() + offsets_[l], out, in);
    if (grad != nullptr) {
      Eigen::Map<Matrix> gW(grad->data() + offsets_[l], out, in);
      Eigen::Map<Eigen::RowVectorXd> gb(grad->data() + offsets_[l] + w[l] * w[l + 1], out);
      gW.noalias() += dz.transpose() * cache.post[l];
      gb += dz.colwise().sum();
    }
    dh = dz * W;
    if (l > 0) dz = (dh.array() * silu_prime(cache.pre[l - 1]).array()).matrix();
  }
  return dh.leftCols(static_cast<Eigen::Index>(arch_.dim));
}

Vector SurrogateModel::per_sample_grad_sq(const Vector& theta, const ForwardCache& cache,
                                          const Matrix& d_output, bool last_layer) const {
  // The per-row gradient of a dense layer is the outer product dz_i h_i^T,
  // whose squared norm factorizes as |dz_i|^2 |h_i|^2 (plus |dz_i|^2 for the bias).
  const auto w = arch_.widths();
  Vector total = Vector::Zero(d_output.rows());
  Matrix dz = d_output;
  for (std::size_t l = w.size() - 1; l-- > 0;) {
    total.array() += dz.rowwise().squaredNorm().array() * (cache.post[l].rowwise().squaredNorm().array() + 1.0);
    if (last_layer || l == 0) break;
    const ConstMap W(theta.data() + offsets_[l], static_cast<Eigen::Index>(w[l + 1]),
                     static_cast<Eigen::Index>(w[l]));
    dz = ((dz * W).array() * silu_prime(cache.pre[l - 1]).array()).matrix();
  }
  return total;
}

Matrix SurrogateModel::jvp(const Vector& theta, const Matrix& xs, const Vector& ts, const Matrix& dirs) const {
  if (dirs.rows() != xs.rows() || dirs.cols() != xs.cols()) throw ValidationError("surrogate jvp: shape mismatch");
  const auto w = arch_.widths();
  Matrix h = input(xs, ts);
  Matrix tangent = Matrix::Zero(h.rows(), h.cols());
  tangent.leftCols(xs.cols()) = dirs;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(w[l]);
    const auto out = static_cast<Eigen::Index>(w[l + 1]);
    const ConstMap W(theta.data() + offsets_[l], out, in);
    const Eigen::Map<const Eigen::RowVectorXd> b(theta.data() + offsets_[l] + w[l] * w[l + 1], out);
    Matrix z = h * W.transpose();
    z.rowwise() += b;
    tangent = tangent * W.transpose();
    if (l + 2 == w.size()) break;
    tangent = (tangent.array() * silu_prime(z).array()).matrix();
    h = silu(z);
  }
  return tangent;
}

LossGrad fm_loss(const SurrogateModel& model, const Vector& theta, const Vector& x0, const Vector& x1, double t) {
  Vector ts(1);
  ts[0] = t;
  return fm_loss_batch(model, theta, x0.transpose(), x1.transpose(), ts);
}

LossGrad fm_loss_batch(const SurrogateModel& model, const Vector& theta, const Matrix& x0, const Matrix& x1,
                       const Vector& ts) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols()) throw ValidationError("fm_loss: batch shape mismatch");
  for (Eigen::Index r = 0; r < ts.size(); ++r)
    if (!(ts[r] >= 0.0 && ts[r] < 1.0)) throw ValidationError("fm_loss: t must lie in [0, 1)");
  const Matrix xt = (1.0 - ts.array()).matrix().asDiagonal() * x0 + ts.asDiagonal() * x1;
  const ForwardCache cache = model.forward(theta, xt, ts);
  const Matrix diff = cache.output() - (x1 - x0);
  const double scale = 1.0 / static_cast<double>(x0.rows());
  LossGrad out;
  out.loss = diff.squaredNorm() * scale;
  out.grad = Vector::Zero(theta.size());
  model.backward(theta, cache, 2.0 * scale * diff, &out.grad);
  return out;
}

SurrogateField::SurrogateField(std::shared_ptr<const SurrogateModel> model, bool use_ema, std::string tag)
    : model_(std::move(model)), use_ema_(use_ema), tag_(std::move(tag)) {
  if (!model_) throw ValidationError("surrogate field: null model");
}

Vector SurrogateField::evaluate(const Vector& x, double t) const {
  return evaluate_batch(x.transpose(), t).row(0).transpose();
}

Matrix SurrogateField::evaluate_batch(const Matrix& xs, double t) const {
  check_time(t);
  return model_->evaluate(theta(), xs, Vector::Constant(xs.rows(), t));
}

Vector SurrogateField::jvp(const Vector& x, double t, const Vector& direction) const {
  check_time(t);
  Vector ts(1);
  ts[0] = t;
  return model_->jvp(theta(), x.transpose(), ts, direction.transpose()).row(0).transpose();
}

Vector SurrogateField::vjp(const Vector& x, double t, const Vector& cotangent) const {
  check_time(t);
  Vector ts(1);
  ts[0] = t;
  const ForwardCache cache = model_->forward(theta(), x.transpose(), ts);
  return model_->backward(theta(), cache, cotangent.transpose(), nullptr).row(0).transpose();
}

}  // namespace lfm
