#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "lfm/core/rng.hpp"
#include "lfm/core/types.hpp"
#include "lfm/transport/velocity_field.hpp"

namespace lfm {

/// Shape of the surrogate MLP. The input is x concatenated with a sinusoidal
/// embedding of t; with time_embedding = 0 the raw t is appended instead.
struct SurrogateArch {
  std::size_t dim = 2;
  std::size_t time_embedding = 32;  // even, or 0
  std::vector<std::size_t> hidden{256, 256, 256};

  /// Hidden width used by default_arch: 256, grown to d / 8 rounded up to a
  /// multiple of 64 once d exceeds 2048.
  static std::size_t default_width(std::size_t dim);
  static SurrogateArch default_arch(std::size_t dim);

  std::size_t input_width() const { return dim + (time_embedding == 0 ? 1 : time_embedding); }
  /// Layer widths from input to output.
  std::vector<std::size_t> widths() const;
  void validate() const;
};

/// Per-layer activations of one forward pass over a batch.
struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activations of each layer
  std::vector<Matrix> post;  // post[0] is the input, post[l + 1] the output of layer l
  const Matrix& output() const { return post.back(); }
};

/// Feed-forward velocity network with SiLU hidden activations and a linear
/// output layer. Parameters live in one flat vector, layer by layer, each
/// layer storing its weight (out x in, row-major) followed by its bias.
class SurrogateModel {
 public:
  SurrogateModel() = default;
  /// Weights ~ N(0, 1 / fan_in), zero biases, EMA shadow equal to the weights.
  SurrogateModel(SurrogateArch arch, Rng& init, double ema_decay = 0.999);
  SurrogateModel(SurrogateArch arch, Vector params, Vector ema, double ema_decay);

  const SurrogateArch& arch() const noexcept { return arch_; }
  std::size_t dim() const noexcept { return arch_.dim; }
  std::size_t param_count() const noexcept { return static_cast<std::size_t>(params_.size()); }
  std::size_t layer_count() const noexcept { return arch_.hidden.size() + 1; }

  Vector& params() noexcept { return params_; }
  const Vector& params() const noexcept { return params_; }
  Vector& ema() noexcept { return ema_; }
  const Vector& ema() const noexcept { return ema_; }
  double ema_decay() const noexcept { return ema_decay_; }
  void set_ema_decay(double decay);
  /// ema <- decay * ema + (1 - decay) * params.
  void update_ema();

  /// Network input rows [x, embed(t)] for per-row times.
  Matrix input(const Matrix& xs, const Vector& ts) const;

  ForwardCache forward(const Vector& theta, const Matrix& xs, const Vector& ts) const;
  Matrix evaluate(const Vector& theta, const Matrix& xs, const Vector& ts) const;

  /// Backpropagates dL/d(output) through a cached pass. Accumulates the
  /// parameter gradient into `grad` (size param_count) when non-null and
  /// returns dL/dx (the x block of the input gradient).
  Matrix backward(const Vector& theta, const ForwardCache& cache, const Matrix& d_output,
                  Vector* grad) const;

  /// Squared norm of each row's own parameter gradient, given dL_i/d(output_i)
  /// per row. last_layer restricts the norm to the output layer.
  Vector per_sample_grad_sq(const Vector& theta, const ForwardCache& cache, const Matrix& d_output,
                            bool last_layer = false) const;

  /// Forward-mode derivative of the output along an x-direction per row.
  Matrix jvp(const Vector& theta, const Matrix& xs, const Vector& ts, const Matrix& dirs) const;

  /// Offset of layer l's weight block inside the parameter vector.
  std::size_t layer_offset(std::size_t l) const { return offsets_[l]; }

 private:
  void build_offsets();

  SurrogateArch arch_;
  std::vector<std::size_t> offsets_;
  Vector params_;
  Vector ema_;
  double ema_decay_ = 0.999;
};

/// Rectified-flow loss |v_theta(x_t, t) - (x1 - x0)|^2 with
/// x_t = (1 - t) x0 + t x1, and its exact parameter gradient.
struct LossGrad {
  double loss = 0.0;
  Vector grad;
};
LossGrad fm_loss(const SurrogateModel& model, const Vector& theta, const Vector& x0, const Vector& x1,
                 double t);

/// Mean of fm_loss over the rows of a batch, with the gradient of the mean.
LossGrad fm_loss_batch(const SurrogateModel& model, const Vector& theta, const Matrix& x0,
                       const Matrix& x1, const Vector& ts);

/// The model seen as a VelocityField, evaluated with its EMA parameters (or
/// the raw parameters when use_ema is false). Holds a shared reference so
/// the field stays valid while the model is copied around.
class SurrogateField final : public VelocityField {
 public:
  explicit SurrogateField(std::shared_ptr<const SurrogateModel> model, bool use_ema = true,
                          std::string tag = "surrogate");

  std::size_t dim() const override { return model_->dim(); }
  std::string tag() const override { return tag_; }
  Vector evaluate(const Vector& x, double t) const override;
  Matrix evaluate_batch(const Matrix& xs, double t) const override;
  Vector jvp(const Vector& x, double t, const Vector& direction) const override;
  Vector vjp(const Vector& x, double t, const Vector& cotangent) const override;

  const SurrogateModel& model() const noexcept { return *model_; }
  const Vector& theta() const noexcept { return use_ema_ ? model_->ema() : model_->params(); }

 private:
  std::shared_ptr<const SurrogateModel> model_;
  bool use_ema_;
  std::string tag_;
};

}  // namespace lfm
