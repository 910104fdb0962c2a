#include "lfm/surrogate/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lfm/core/error.hpp"

namespace lfm {

void TrainConfig::validate() const {
  if (batch == 0) throw ConfigError("train: batch must be positive");
  if (steps == 0) throw ConfigError("train: steps must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0, 1)");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("train: ema decay must lie in [0, 1]");
  if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be non-negative");
  if (t_mode == TimeSampling::grid && grid_k < 2) throw ConfigError("train: grid mode needs K >= 2");
  if (!(t_lo >= 0.0 && t_lo < t_hi && t_hi <= 1.0)) throw ConfigError("train: time range must satisfy 0 <= t_lo < t_hi <= 1");
}

Vector sample_times(const TrainConfig& cfg, std::size_t count, Rng& rng) {
  Vector ts(static_cast<Eigen::Index>(count));
  const double span = cfg.t_hi - cfg.t_lo;
  for (Eigen::Index i = 0; i < ts.size(); ++i) {
    if (cfg.t_mode == TimeSampling::grid) {
      const auto k = static_cast<double>(rng.uniform_index(cfg.grid_k));
      ts[i] = cfg.t_lo + span * k / static_cast<double>(cfg.grid_k);
    } else {
      ts[i] = cfg.t_lo + span * rng.uniform();
    }
  }
  return ts;
}

std::vector<std::size_t> hungarian(const Matrix& cost) {
  // Shortest augmenting path formulation with row/column potentials.
  const auto n = static_cast<std::size_t>(cost.rows());
  if (cost.cols() != cost.rows()) throw ValidationError("hungarian: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);  // match[col] = row, 1-based
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col0] = true;
      const std::size_t r = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double cur = cost(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c - 1)) - u[r] - v[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t c = 1; c <= n; ++c) perm[match[c] - 1] = c - 1;
  return perm;
}

std::vector<std::size_t> greedy_assignment(const Matrix& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  if (cost.cols() != cost.rows()) throw ValidationError("greedy assignment: cost matrix must be square");
  std::vector<std::size_t> order(n * n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cost.data()[a] < cost.data()[b]; });
  std::vector<std::size_t> perm(n, n);
  std::vector<bool> col_used(n, false);
  std::size_t done = 0;
  for (std::size_t k = 0; k < order.size() && done < n; ++k) {
    const std::size_t r = order[k] / n;
    const std::size_t c = order[k] % n;
    if (perm[r] != n || col_used[c]) continue;
    perm[r] = c;
    col_used[c] = true;
    ++done;
  }
  return perm;
}

Matrix ot_pair(const Matrix& x0, const Matrix& x1) {
  Matrix cost = -2.0 * x0 * x1.transpose();
  cost.colwise() += x0.rowwise().squaredNorm();
  cost.rowwise() += x1.rowwise().squaredNorm().transpose();
  constexpr Eigen::Index kExactLimit = 256;
  const auto perm = x0.rows() <= kExactLimit ? hungarian(cost) : greedy_assignment(cost);
  Matrix out(x1.rows(), x1.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x1.row(static_cast<Eigen::Index>(perm[i]));
  return out;
}

MomentumSgd::MomentumSgd(double lr, double momentum, std::size_t size)
    : lr_(lr), momentum_(momentum), velocity_(Vector::Zero(static_cast<Eigen::Index>(size))) {}

void MomentumSgd::step(Vector& theta, const Vector& grad) {
  velocity_ = momentum_ * velocity_ + grad;
  theta -= lr_ * velocity_;
}

void draw_minibatch(const LatentDataset& ds, std::size_t batch, Rng& rng, Matrix& x0, Matrix& x1) {
  const auto b = static_cast<Eigen::Index>(batch);
  const auto d = static_cast<Eigen::Index>(ds.dim());
  x1.resize(b, d);
  for (Eigen::Index i = 0; i < b; ++i) x1.row(i) = ds.data().row(static_cast<Eigen::Index>(rng.uniform_index(ds.size())));
  x0.resize(b, d);
  for (Eigen::Index i = 0; i < x0.size(); ++i) x0.data()[i] = rng.normal();
}

TrainResult train(SurrogateModel& model, const LatentDataset& ds, const TrainConfig& cfg,
                  const StepObserver& observer) {
  cfg.validate();
  if (ds.dim() != model.dim()) throw ValidationError("train: dataset dimension does not match the model");
  model.set_ema_decay(cfg.ema_decay);
  Rng rng(cfg.seed, stream_id("surrogate-train"));
  MomentumSgd opt(cfg.lr, cfg.momentum, model.param_count());
  TrainResult result;
  result.loss.reserve(cfg.steps);
  Matrix x0, x1;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    draw_minibatch(ds, cfg.batch, rng, x0, x1);
    if (cfg.coupling == Coupling::minibatch_ot) x1 = ot_pair(x0, x1);
    const Vector ts = sample_times(cfg, cfg.batch, rng);
    LossGrad lg;
    try {
      lg = fm_loss_batch(model, model.params(), x0, x1, ts);
    } catch (const DivergenceError&) {
      throw DivergenceError("train: non-finite activations", step + 1);
    }
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
      throw DivergenceError("train: loss became non-finite", step + 1);
    if (cfg.grad_clip > 0.0) {
      const double nrm = lg.grad.norm();
      if (nrm > cfg.grad_clip) lg.grad *= cfg.grad_clip / nrm;
    }
    opt.step(model.params(), lg.grad);
    model.update_ema();
    result.loss.push_back(lg.loss);
    if (observer) observer(step + 1, model);
  }
  return result;
}

}  // namespace lfm
