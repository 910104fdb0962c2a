#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "lfm/core/dataset.hpp"
#include "lfm/core/rng.hpp"
#include "lfm/surrogate/model.hpp"

namespace lfm {

struct ScoreOptions {
  std::size_t noise_paths = 2;  // M
  std::size_t timesteps = 8;    // T, at midpoints (k + 0.5) / T
  /// Normalize by the mean over all samples per timestep (order-free).
  /// When false, a running EMA over the sample stream is used instead.
  bool two_pass = true;
  double normalizer_decay = 0.99;  // single-stream mode only
  bool normalize = true;           // false fixes every normalizer to 1
  bool last_layer = false;         // gradient score over the output layer only
  bool use_ema = true;
};

struct ScoreTable {
  std::vector<SampleId> ids;      // dataset row order
  std::vector<double> loss;       // s^L per row
  std::vector<double> grad;       // s^G per row (squared gradient norm)
  Matrix noise;                   // M x d shared noise vectors
  std::vector<double> times;      // T shared timesteps
  std::vector<double> mu_loss;    // per timestep normalizer
  std::vector<double> mu_grad;
};

/// Scores every sample against the same M noise vectors and T timesteps.
/// For sample i the value at (t_k, x0_m) is the flow-matching loss on the
/// path from x0_m to x_i (resp. the squared norm of its parameter gradient),
/// divided by the normalizer of t_k and averaged over m and k.
ScoreTable score_samples(const SurrogateModel& model, const LatentDataset& ds, const ScoreOptions& options,
                         Rng& rng);

/// CSV `id,loss_score,grad_score`.
void write_scores_csv(const ScoreTable& table, const std::filesystem::path& path);
/// Reads a score CSV and aligns it with the dataset rows by id. Throws
/// IoError when an id is missing.
struct LoadedScores {
  std::vector<double> loss;
  std::vector<double> grad;
};
LoadedScores read_scores_csv(const std::filesystem::path& path, const LatentDataset& ds);

}  // namespace lfm
