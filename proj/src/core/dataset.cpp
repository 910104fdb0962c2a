#include "lfm/core/dataset.hpp"

#include <numeric>
#include <string>

#include "lfm/core/error.hpp"

namespace lfm {

LatentDataset::LatentDataset(Matrix data, std::vector<SampleId> ids,
                             std::optional<Matrix> embeddings,
                             std::optional<std::vector<std::int32_t>> labels) {
  if (data.rows() < 1 || data.cols() < 1)
    throw ValidationError("dataset must have at least one row and one column");
  if (!data.allFinite()) throw ValidationError("dataset contains non-finite values");
  const auto n = static_cast<std::size_t>(data.rows());

  if (ids.empty()) {
    ids.resize(n);
    std::iota(ids.begin(), ids.end(), SampleId{0});
  } else if (ids.size() != n) {
    throw ValidationError("dataset ids: expected " + std::to_string(n) + " entries, got " +
                          std::to_string(ids.size()));
  }
  if (embeddings) {
    if (static_cast<std::size_t>(embeddings->rows()) != n)
      throw ValidationError("dataset embeddings: row count " +
                            std::to_string(embeddings->rows()) + " does not match n=" +
                            std::to_string(n));
    if (!embeddings->allFinite()) throw ValidationError("dataset embeddings are non-finite");
  }
  if (labels && labels->size() != n)
    throw ValidationError("dataset labels: expected " + std::to_string(n) + " entries");

  Impl impl{std::move(data), std::move(ids), std::move(embeddings), std::move(labels), {}};
  impl.index.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!impl.index.emplace(impl.ids[i], i).second)
      throw ValidationError("dataset ids: duplicate id " + std::to_string(impl.ids[i]));
  }
  impl_ = std::make_shared<const Impl>(std::move(impl));
}

std::optional<std::size_t> LatentDataset::row_of(SampleId id) const {
  auto it = impl_->index.find(id);
  if (it == impl_->index.end()) return std::nullopt;
  return it->second;
}

const Matrix& LatentDataset::embeddings() const {
  if (!impl_->embeddings) throw ValidationError("dataset has no embeddings");
  return *impl_->embeddings;
}

const std::vector<std::int32_t>& LatentDataset::labels() const {
  if (!impl_->labels) throw ValidationError("dataset has no labels");
  return *impl_->labels;
}

LatentDataset LatentDataset::subset(std::span<const std::size_t> rows) const {
  if (rows.empty()) throw ValidationError("subset: empty row selection");
  const auto m = static_cast<Eigen::Index>(rows.size());
  Matrix data(m, impl_->data.cols());
  std::vector<SampleId> ids(rows.size());
  std::optional<Matrix> emb;
  if (impl_->embeddings) emb.emplace(m, impl_->embeddings->cols());
  std::optional<std::vector<std::int32_t>> labels;
  if (impl_->labels) labels.emplace(rows.size());

  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    if (r >= size()) throw ValidationError("subset: row " + std::to_string(r) + " out of range");
    const auto kk = static_cast<Eigen::Index>(k);
    const auto rr = static_cast<Eigen::Index>(r);
    data.row(kk) = impl_->data.row(rr);
    ids[k] = impl_->ids[r];
    if (emb) emb->row(kk) = impl_->embeddings->row(rr);
    if (labels) (*labels)[k] = (*impl_->labels)[r];
  }
  return LatentDataset(std::move(data), std::move(ids), std::move(emb), std::move(labels));
}

LatentDataset LatentDataset::select_ids(std::span<const SampleId> ids) const {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (SampleId id : ids) {
    auto r = row_of(id);
    if (!r) throw ValidationError("select_ids: unknown id " + std::to_string(id));
    rows.push_back(*r);
  }
  return subset(rows);
}

}  // namespace lfm
