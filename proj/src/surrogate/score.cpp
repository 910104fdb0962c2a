#include "lfm/surrogate/score.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "lfm/core/error.hpp"
#include "lfm/core/format.hpp"

namespace lfm {

ScoreTable score_samples(const SurrogateModel& model, const LatentDataset& ds, const ScoreOptions& opt, Rng& rng) {
  if (opt.noise_paths == 0 || opt.timesteps == 0) throw ValidationError("score: M and T must be at least 1");
  if (ds.dim() != model.dim()) throw ValidationError("score: dataset dimension does not match the model");
  const std::size_t n = ds.size();
  const std::size_t M = opt.noise_paths;
  const std::size_t T = opt.timesteps;
  const auto d = static_cast<Eigen::Index>(ds.dim());
  const Vector& theta = opt.use_ema ? model.ema() : model.params();

  ScoreTable table;
  table.ids = ds.ids();
  table.noise.resize(static_cast<Eigen::Index>(M), d);
  for (Eigen::Index i = 0; i < table.noise.size(); ++i) table.noise.data()[i] = rng.normal();
  for (std::size_t k = 0; k < T; ++k) table.times.push_back((static_cast<double>(k) + 0.5) / static_cast<double>(T));

  // raw[(k * M + m) * n + i]
  std::vector<double> raw_loss(n * M * T), raw_grad(n * M * T);
  constexpr std::size_t kChunk = 256;
  for (std::size_t k = 0; k < T; ++k) {
    const double t = table.times[k];
    for (std::size_t m = 0; m < M; ++m) {
      const Eigen::RowVectorXd x0 = table.noise.row(static_cast<Eigen::Index>(m));
      for (std::size_t start = 0; start < n; start += kChunk) {
        const auto rows = static_cast<Eigen::Index>(std::min(kChunk, n - start));
        const Matrix x1 = ds.data().middleRows(static_cast<Eigen::Index>(start), rows);
        Matrix xt = t * x1;
        xt.rowwise() += (1.0 - t) * x0;
        Matrix target = x1;
        target.rowwise() -= x0;
        const ForwardCache cache = model.forward(theta, xt, Vector::Constant(rows, t));
        const Matrix diff = cache.output() - target;
        const Vector g = model.per_sample_grad_sq(theta, cache, 2.0 * diff, opt.last_layer);
        for (Eigen::Index r = 0; r < rows; ++r) {
          const std::size_t at = (k * M + m) * n + start + static_cast<std::size_t>(r);
          raw_loss[at] = diff.row(r).squaredNorm();
          raw_grad[at] = g[r];
        }
      }
    }
  }

  table.mu_loss.assign(T, 1.0);
  table.mu_grad.assign(T, 1.0);
  table.loss.assign(n, 0.0);
  table.grad.assign(n, 0.0);
  const double inv = 1.0 / static_cast<double>(M * T);

  if (!opt.normalize || opt.two_pass) {
    if (opt.normalize) {
      // Sum in id order so the normalizers do not depend on row layout.
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ds.id(a) < ds.id(b); });
      for (std::size_t k = 0; k < T; ++k) {
        double sl = 0.0, sg = 0.0;
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t i : order) {
            sl += raw_loss[(k * M + m) * n + i];
            sg += raw_grad[(k * M + m) * n + i];
          }
        table.mu_loss[k] = sl / static_cast<double>(n * M);
        table.mu_grad[k] = sg / static_cast<double>(n * M);
        if (!(table.mu_loss[k] > 0.0) || !(table.mu_grad[k] > 0.0))
          throw ValidationError("score: zero normalizer at t = " + format_double(table.times[k]));
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < T; ++k)
        for (std::size_t m = 0; m < M; ++m) {
          table.loss[i] += inv * raw_loss[(k * M + m) * n + i] / table.mu_loss[k];
          table.grad[i] += inv * raw_grad[(k * M + m) * n + i] / table.mu_grad[k];
        }
    return table;
  }

  // Single-stream mode: normalizers follow the samples in row order.
  const double beta = opt.normalizer_decay;
  std::vector<bool> started(T, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < T; ++k)
      for (std::size_t m = 0; m < M; ++m) {
        const std::size_t at = (k * M + m) * n + i;
        if (!started[k]) {
          table.mu_loss[k] = raw_loss[at];
          table.mu_grad[k] = raw_grad[at];
          started[k] = true;
        } else {
          table.mu_loss[k] = beta * table.mu_loss[k] + (1.0 - beta) * raw_loss[at];
          table.mu_grad[k] = beta * table.mu_grad[k] + (1.0 - beta) * raw_grad[at];
        }
        if (!(table.mu_loss[k] > 0.0) || !(table.mu_grad[k] > 0.0))
          throw ValidationError("score: zero normalizer at t = " + format_double(table.times[k]));
        table.loss[i] += inv * raw_loss[at] / table.mu_loss[k];
        table.grad[i] += inv * raw_grad[at] / table.mu_grad[k];
      }
  return table;
}

void write_scores_csv(const ScoreTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,loss_score,grad_score\n";
  for (std::size_t i = 0; i < table.ids.size(); ++i)
    out << table.ids[i] << ',' << format_double(table.loss[i]) << ',' << format_double(table.grad[i]) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

LoadedScores read_scores_csv(const std::filesystem::path& path, const LatentDataset& ds) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,loss_score,grad_score")
    throw IoError(path.string() + ": expected header id,loss_score,grad_score");
  std::unordered_map<SampleId, std::pair<double, double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    try {
      rows[std::stoll(a)] = {std::stod(b), std::stod(c)};
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  LoadedScores out;
  out.loss.resize(ds.size());
  out.grad.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto it = rows.find(ds.id(i));
    if (it == rows.end()) throw IoError(path.string() + ": no score for sample " + std::to_string(ds.id(i)));
    out.loss[i] = it->second.first;
    out.grad[i] = it->second.second;
  }
  return out;
}

}  // namespace lfm
