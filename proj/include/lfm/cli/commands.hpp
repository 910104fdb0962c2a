#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lfm/cli/config.hpp"
#include "lfm/core/dataset.hpp"
#include "lfm/pruning/selection.hpp"
#include "lfm/transport/analysis.hpp"

namespace lfm::cli {

/// Exit codes of lfmlab.
enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDivergence = 3, kIoError = 4 };

/// Parses the command line, runs one subcommand and maps errors to exit
/// codes. Messages go to `err`, tables printed by `defaults` to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// CSV `id,score,cluster,kept`, plus `discrepancy` (the cluster's herding
/// discrepancy) for the kernel criterion.
void write_selection_csv(const PruneSelection& sel, const std::filesystem::path& path);
/// Kept ids, one per line, in dataset order.
void write_id_list(const PruneSelection& sel, const std::filesystem::path& path);
std::vector<SampleId> read_id_list(const std::filesystem::path& path);

/// CSV `source_id,assigned_id,winner_weight,margin`.
void write_assignments_csv(const std::vector<Assignment>& assignments, const std::filesystem::path& path);
/// CSV `sample_id,dominance_freq,cum_mass,softmax_mass`.
void write_dominance_csv(const std::vector<DominanceEntry>& entries, const std::filesystem::path& path);

/// Minimal CSV table: header plus rows of cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace lfm::cli
