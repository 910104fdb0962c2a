#pragma once

#include <filesystem>

#include "lfm/core/dataset.hpp"

namespace lfm {

/// Binary dataset layout (all integers little-endian):
///
///   "LFSD" | version u32 = 1 | n u64 | d u64 | e u64 | flags u32
///   n*d f32 data (row-major) | n*e f32 embeddings | n i32 labels (flags bit0)
///
/// Values are stored as 32-bit floats. Ids are not stored; a loaded dataset
/// carries ids 0..n-1.
void save_dataset(const LatentDataset& ds, const std::filesystem::path& path);
LatentDataset load_dataset(const std::filesystem::path& path);

}  // namespace lfm
