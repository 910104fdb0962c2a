#include "lfm/c2f/stitch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lfm/core/error.hpp"
#include "lfm/core/format.hpp"

namespace lfm {

StitchedField::StitchedField(std::shared_ptr<const VelocityField> coarse, std::shared_ptr<const VelocityField> fine,
                             double t0)
    : coarse_(std::move(coarse)), fine_(std::move(fine)), t0_(t0) {
  if (!coarse_ || !fine_) throw ValidationError("stitched field: null component");
  if (coarse_->dim() != fine_->dim()) throw ValidationError("stitched field: coarse and fine dimensions differ");
  if (!(t0 >= 0.0 && t0 <= fine_->t_max())) throw ValidationError("stitched field: t0 must lie in [0, t_max]");
  if (t0 > coarse_->t_max()) throw ValidationError("stitched field: coarse field cannot reach t0");
}

std::string StitchedField::tag() const {
  return "stitch(" + coarse_->tag() + "|" + fine_->tag() + "@" + format_double(t0_) + ")";
}

Vector StitchedField::evaluate(const Vector& x, double t) const { return route(t).evaluate(x, t); }
Matrix StitchedField::evaluate_batch(const Matrix& xs, double t) const { return route(t).evaluate_batch(xs, t); }
Vector StitchedField::jvp(const Vector& x, double t, const Vector& d) const { return route(t).jvp(x, t, d); }
Vector StitchedField::vjp(const Vector& x, double t, const Vector& c) const { return route(t).vjp(x, t, c); }

std::vector<double> seam_grid(double t0, double t_end, std::size_t steps_coarse, std::size_t steps_fine) {
  if (!(t0 >= 0.0 && t0 <= t_end)) throw ValidationError("seam grid: t0 must lie in [0, t_end]");
  if (t0 == 0.0) return time_grid(0.0, t_end, steps_fine);
  if (t0 == t_end) return time_grid(0.0, t_end, steps_coarse);
  if (steps_coarse == 0 || steps_fine == 0) throw ValidationError("seam grid: both segments need steps");
  std::vector<double> grid = time_grid(0.0, t0, steps_coarse);
  const std::vector<double> tail = time_grid(t0, t_end, steps_fine);
  grid.insert(grid.end(), tail.begin() + 1, tail.end());
  return grid;
}

Matrix invert_to_seam_batch(const VelocityField& fine, const Matrix& x1, double t0, std::size_t steps) {
  if (!(t0 > 0.0 && t0 <= 1.0)) throw ValidationError("invert_to_seam: t0 must lie in (0, 1]");
  if (t0 >= fine.t_max()) return x1;
  try {
    return integrate_batch(fine, x1, fine.t_max(), t0, steps);
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string("invert_to_seam: ") + e.what(), e.step());
  }
}

Vector invert_to_seam(const VelocityField& fine, const Vector& x1, double t0, std::size_t steps) {
  return invert_to_seam_batch(fine, x1.transpose(), t0, steps).row(0).transpose();
}

std::vector<Trajectory> stitched_sample(const StitchedField& field, const Matrix& x0, std::size_t steps_coarse,
                                        std::size_t steps_fine) {
  const std::vector<double> grid = seam_grid(field.t0(), field.t_max(), steps_coarse, steps_fine);
  std::vector<Trajectory> out(static_cast<std::size_t>(x0.rows()));
  for (auto& tr : out) {
    tr.times = grid;
    tr.field_tag = field.tag();
    tr.states.resize(static_cast<Eigen::Index>(grid.size()), x0.cols());
  }
  integrate_batch_grid(field, x0, grid, [&](std::size_t k, double, const Matrix& x) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i].states.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(i));
  });
  return out;
}

Matrix stitched_endpoints(const StitchedField& field, const Matrix& x0, std::size_t steps_coarse,
                          std::size_t steps_fine, Matrix* seam_states) {
  const std::vector<double> grid = seam_grid(field.t0(), field.t_max(), steps_coarse, steps_fine);
  // Index of t0 in the grid: 0 for a pure fine run, the end for a pure coarse run.
  const std::size_t seam_index = field.t0() == 0.0 ? 0 : (field.t0() == field.t_max() ? grid.size() - 1 : steps_coarse);
  return integrate_batch_grid(field, x0, grid, [&](std::size_t k, double, const Matrix& x) {
    if (seam_states != nullptr && k == seam_index) *seam_states = x;
  });
}

double seam_loss(const SurrogateModel& coarse, const VelocityField& fine, const Matrix& x1, double t0,
                 std::size_t inversion_steps) {
  const Matrix xs = invert_to_seam_batch(fine, x1, t0, inversion_steps);
  const Matrix vf = fine.evaluate_batch(xs, t0);
  const Matrix vc = coarse.evaluate(coarse.params(), xs, Vector::Constant(xs.rows(), t0));
  return (vc - vf).squaredNorm() / static_cast<double>(xs.rows());
}

FinetuneResult finetune_coarse(SurrogateModel& coarse, const VelocityField& fine, const LatentDataset& ds,
                               const FinetuneConfig& cfg) {
  if (!(cfg.lambda_v >= 0.0)) throw ConfigError("finetune: lambda_v must be non-negative");
  if (!(cfg.t0 > 0.0 && cfg.t0 < fine.t_max())) throw ConfigError("finetune: t0 must lie in (0, t_max of the fine field)");
  if (cfg.inversion_steps == 0) throw ConfigError("finetune: inversion steps must be positive");
  if (fine.dim() != coarse.dim() || ds.dim() != coarse.dim()) throw ValidationError("finetune: dimension mismatch");
  TrainConfig tc = cfg.train;
  tc.t_hi = cfg.t0;
  tc.validate();
  coarse.set_ema_decay(tc.ema_decay);

  // Same stream and draw order as `train`, so lambda_v = 0 reproduces it.
  Rng rng(tc.seed, stream_id("surrogate-train"));
  MomentumSgd opt(tc.lr, tc.momentum, coarse.param_count());
  FinetuneResult result;
  Matrix x0, x1;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    draw_minibatch(ds, tc.batch, rng, x0, x1);
    if (tc.coupling == Coupling::minibatch_ot) x1 = ot_pair(x0, x1);
    const Vector ts = sample_times(tc, tc.batch, rng);
    LossGrad lg;
    try {
      lg = fm_loss_batch(coarse, coarse.params(), x0, x1, ts);
      if (cfg.lambda_v > 0.0) {
        // Seam state recomputed from the current minibatch every step.
        const Matrix xs = invert_to_seam_batch(fine, x1, cfg.t0, cfg.inversion_steps);
        const Matrix vf = fine.evaluate_batch(xs, cfg.t0);
        const ForwardCache cache = coarse.forward(coarse.params(), xs, Vector::Constant(xs.rows(), cfg.t0));
        const Matrix diff = cache.output() - vf;
        const double scale = 1.0 / static_cast<double>(xs.rows());
        result.seam_loss.push_back(diff.squaredNorm() * scale);
        coarse.backward(coarse.params(), cache, (2.0 * cfg.lambda_v * scale) * diff, &lg.grad);
      }
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("finetune: ") + e.what(), step + 1);
    }
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) throw DivergenceError("finetune: loss became non-finite", step + 1);
    if (tc.grad_clip > 0.0) {
      const double nrm = lg.grad.norm();
      if (nrm > tc.grad_clip) lg.grad *= tc.grad_clip / nrm;
    }
    opt.step(coarse.params(), lg.grad);
    coarse.update_ema();
    result.fm_loss.push_back(lg.loss);
  }
  return result;
}

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

SeamReport seam_report(const StitchedField& field, const Matrix& x0, std::size_t steps_coarse, std::size_t steps_fine) {
  Matrix seam;
  const Matrix stitched = stitched_endpoints(field, x0, steps_coarse, steps_fine, &seam);
  const std::vector<double> grid = seam_grid(field.t0(), field.t_max(), steps_coarse, steps_fine);
  const Matrix fine_only = integrate_batch_grid(field.fine(), x0, grid);

  SeamReport rep;
  const double ts = std::min(field.t0(), field.fine().t_max());
  const Matrix gap = field.fine().evaluate_batch(seam, ts) - field.coarse().evaluate_batch(seam, std::min(ts, field.coarse().t_max()));
  for (Eigen::Index r = 0; r < x0.rows(); ++r) {
    rep.seam_gap.push_back(gap.row(r).norm());
    rep.endpoint_dev.push_back((stitched.row(r) - fine_only.row(r)).norm());
  }
  rep.gap_mean = mean_of(rep.seam_gap);
  rep.gap_median = median_of(rep.seam_gap);
  rep.dev_mean = mean_of(rep.endpoint_dev);
  rep.dev_median = median_of(rep.endpoint_dev);
  rep.dev_p95 = quantile_of(rep.endpoint_dev, 0.95);
  return rep;
}

void write_seam_csv(const SeamReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "probe_id,seam_gap,endpoint_dev\n";
  for (std::size_t i = 0; i < report.probes(); ++i)
    out << i << ',' << format_double(report.seam_gap[i]) << ',' << format_double(report.endpoint_dev[i]) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

CostEstimate cost_model(double t0, std::size_t steps, double cost_coarse, double cost_fine) {
  if (!(cost_coarse > 0.0 && cost_fine > 0.0)) throw ValidationError("cost model: costs must be positive");
  if (!(t0 >= 0.0 && t0 <= 1.0)) throw ValidationError("cost model: t0 must lie in [0, 1]");
  if (steps == 0) throw ValidationError("cost model: steps must be positive");
  const double s = static_cast<double>(steps);
  CostEstimate c;
  c.stitched = t0 * s * cost_coarse + (1.0 - t0) * s * cost_fine;
  c.fine_only = s * cost_fine;
  c.speedup = c.fine_only / c.stitched;
  return c;
}

}  // namespace lfm
