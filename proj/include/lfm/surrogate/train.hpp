#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "lfm/core/dataset.hpp"
#include "lfm/core/rng.hpp"
#include "lfm/surrogate/model.hpp"

namespace lfm {

enum class TimeSampling { continuous, grid };
enum class Coupling { random, minibatch_ot };

struct TrainConfig {
  std::size_t batch = 64;
  std::size_t steps = 2000;
  double lr = 0.01;
  double momentum = 0.9;
  double ema_decay = 0.995;
  double grad_clip = 0.0;  // global gradient norm cap, 0 disables
  TimeSampling t_mode = TimeSampling::continuous;
  std::size_t grid_k = 21;
  Coupling coupling = Coupling::random;
  double t_lo = 0.0;  // times are drawn from [t_lo, t_hi)
  double t_hi = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Called after every step with the 1-based step count.
using StepObserver = std::function<void(std::size_t step, const SurrogateModel& model)>;

struct TrainResult {
  std::vector<double> loss;  // minibatch loss per step
};

/// Time draws for one minibatch: U[t_lo, t_hi) in continuous mode, or one of
/// the K grid points t_lo + (t_hi - t_lo) k / K in grid mode.
Vector sample_times(const TrainConfig& cfg, std::size_t count, Rng& rng);

/// Permutation p minimizing sum_i cost(i, p[i]) for a square cost matrix
/// (Hungarian algorithm, O(n^3)).
std::vector<std::size_t> hungarian(const Matrix& cost);
/// Greedy matching on ascending cost; used for batches above 256 rows.
std::vector<std::size_t> greedy_assignment(const Matrix& cost);
/// Reorders x1 so that row i pairs with x0 row i under the minibatch OT
/// coupling with squared Euclidean cost.
Matrix ot_pair(const Matrix& x0, const Matrix& x1);

/// Heavy-ball SGD: v <- momentum v + g; theta <- theta - lr v.
class MomentumSgd {
 public:
  MomentumSgd(double lr, double momentum, std::size_t size);
  void step(Vector& theta, const Vector& grad);

 private:
  double lr_;
  double momentum_;
  Vector velocity_;
};

/// Draws a minibatch of x1 rows (with replacement) and matching N(0, I) x0.
void draw_minibatch(const LatentDataset& ds, std::size_t batch, Rng& rng, Matrix& x0, Matrix& x1);

/// Trains the raw parameters with the rectified-flow objective and refreshes
/// the EMA shadow after every step. Inference should use SurrogateField,
/// which reads the EMA parameters.
TrainResult train(SurrogateModel& model, const LatentDataset& ds, const TrainConfig& cfg,
                  const StepObserver& observer = {});

}  // namespace lfm
