#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <vector>

#include "lfm/core/dataset.hpp"
#include "lfm/surrogate/model.hpp"
#include "lfm/surrogate/train.hpp"
#include "lfm/transport/integrator.hpp"
#include "lfm/transport/velocity_field.hpp"

namespace lfm {

/// Coarse field on [0, t0), fine field on [t0, t_max]. At t = t0 the fine
/// field is used.
class StitchedField final : public VelocityField {
 public:
  StitchedField(std::shared_ptr<const VelocityField> coarse, std::shared_ptr<const VelocityField> fine,
                double t0);

  std::size_t dim() const override { return fine_->dim(); }
  /// The fine field's t_max; the coarse field must reach t0.
  double t_max() const override { return fine_->t_max(); }
  std::string tag() const override;
  Vector evaluate(const Vector& x, double t) const override;
  Matrix evaluate_batch(const Matrix& xs, double t) const override;
  Vector jvp(const Vector& x, double t, const Vector& direction) const override;
  Vector vjp(const Vector& x, double t, const Vector& cotangent) const override;

  const VelocityField& coarse() const noexcept { return *coarse_; }
  const VelocityField& fine() const noexcept { return *fine_; }
  double t0() const noexcept { return t0_; }

 private:
  const VelocityField& route(double t) const { return t < t0_ ? *coarse_ : *fine_; }

  std::shared_ptr<const VelocityField> coarse_;
  std::shared_ptr<const VelocityField> fine_;
  double t0_;
};

/// Time grid with steps_coarse uniform steps on [0, t0] followed by
/// steps_fine uniform steps on [t0, t_end]. A zero-length segment is dropped.
std::vector<double> seam_grid(double t0, double t_end, std::size_t steps_coarse, std::size_t steps_fine);

/// Backward Euler integration of the fine field from its t_max down to t0.
/// Returns x1 unchanged when t0 >= t_max.
Vector invert_to_seam(const VelocityField& fine, const Vector& x1, double t0, std::size_t steps);
Matrix invert_to_seam_batch(const VelocityField& fine, const Matrix& x1, double t0, std::size_t steps);

/// Integrates every source over seam_grid(t0, t_max, ...) with the stitched
/// field. Applying the same grid to the fine field alone gives the matched
/// fine-only reference.
std::vector<Trajectory> stitched_sample(const StitchedField& field, const Matrix& x0,
                                        std::size_t steps_coarse, std::size_t steps_fine);
Matrix stitched_endpoints(const StitchedField& field, const Matrix& x0, std::size_t steps_coarse,
                          std::size_t steps_fine, Matrix* seam_states = nullptr);

struct FinetuneConfig {
  double t0 = 0.7;
  double lambda_v = 1.0;
  std::size_t inversion_steps = 20;
  TrainConfig train;  // t_hi is replaced by t0
};

struct FinetuneResult {
  std::vector<double> fm_loss;
  std::vector<double> seam_loss;
};

/// Mean over a batch of |v_F(x_t0, t0) - v_C(x_t0, t0)|^2 with x_t0 the fine
/// inversion of x1, using the coarse model's raw parameters.
double seam_loss(const SurrogateModel& coarse, const VelocityField& fine, const Matrix& x1, double t0,
                 std::size_t inversion_steps);

/// Trains the coarse model on the flow-matching loss restricted to
/// t in [0, t0) plus lambda_v times the seam loss of each minibatch. The fine
/// field stays frozen. With lambda_v = 0 this is exactly `train` with
/// t_hi = t0.
FinetuneResult finetune_coarse(SurrogateModel& coarse, const VelocityField& fine, const LatentDataset& ds,
                               const FinetuneConfig& cfg);

struct SeamReport {
  std::vector<double> seam_gap;      // |v_F - v_C| at the stitched seam state, per probe
  std::vector<double> endpoint_dev;  // |stitched endpoint - fine-only endpoint|
  double gap_mean = 0.0, gap_median = 0.0;
  double dev_mean = 0.0, dev_median = 0.0, dev_p95 = 0.0;
  std::size_t probes() const { return seam_gap.size(); }
};

/// Stitched sampling of every source plus the matched fine-only run on the
/// same grid.
SeamReport seam_report(const StitchedField& field, const Matrix& x0, std::size_t steps_coarse,
                       std::size_t steps_fine);

/// CSV `probe_id,seam_gap,endpoint_dev`.
void write_seam_csv(const SeamReport& report, const std::filesystem::path& path);

struct CostEstimate {
  double stitched = 0.0;
  double fine_only = 0.0;
  double speedup = 1.0;
};

/// stitched = t0 steps c_C + (1 - t0) steps c_F, fine_only = steps c_F.
CostEstimate cost_model(double t0, std::size_t steps, double cost_coarse, double cost_fine);

}  // namespace lfm
