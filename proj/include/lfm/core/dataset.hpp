#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "lfm/core/types.hpp"

namespace lfm {

using SampleId = std::int64_t;

/// Immutable n x d matrix of target samples with stable ids, optional
/// selection-space embeddings and optional integer labels.
///
/// Storage is shared between copies; nothing mutates it after construction,
/// so instances can be passed freely across threads. Row subsets keep the
/// original ids.
class LatentDataset {
 public:
  /// ids default to 0..n-1. Throws ValidationError on empty data, non-finite
  /// entries, duplicate ids or mismatched row counts.
  explicit LatentDataset(Matrix data, std::vector<SampleId> ids = {},
                         std::optional<Matrix> embeddings = std::nullopt,
                         std::optional<std::vector<std::int32_t>> labels = std::nullopt);

  std::size_t size() const noexcept { return static_cast<std::size_t>(impl_->data.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(impl_->data.cols()); }

  const Matrix& data() const noexcept { return impl_->data; }
  auto row(std::size_t i) const { return impl_->data.row(static_cast<Eigen::Index>(i)); }

  const std::vector<SampleId>& ids() const noexcept { return impl_->ids; }
  SampleId id(std::size_t i) const { return impl_->ids.at(i); }
  /// Row index holding the given id, if present.
  std::optional<std::size_t> row_of(SampleId id) const;

  bool has_embeddings() const noexcept { return impl_->embeddings.has_value(); }
  const Matrix& embeddings() const;
  /// Embeddings if present, otherwise the raw latent rows.
  const Matrix& selection_space() const noexcept {
    return impl_->embeddings ? *impl_->embeddings : impl_->data;
  }

  bool has_labels() const noexcept { return impl_->labels.has_value(); }
  const std::vector<std::int32_t>& labels() const;

  /// New dataset holding the given rows, in the given order.
  LatentDataset subset(std::span<const std::size_t> rows) const;
  /// New dataset holding the samples with the given ids, in the given order.
  /// Throws ValidationError for ids not present.
  LatentDataset select_ids(std::span<const SampleId> ids) const;

 private:
  struct Impl {
    Matrix data;
    std::vector<SampleId> ids;
    std::optional<Matrix> embeddings;
    std::optional<std::vector<std::int32_t>> labels;
    std::unordered_map<SampleId, std::size_t> index;
  };
  std::shared_ptr<const Impl> impl_;
};

}  // namespace lfm
