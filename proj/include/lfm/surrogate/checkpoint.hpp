#pragma once

#include <filesystem>
#include <string>

#include "lfm/surrogate/model.hpp"

namespace lfm {

/// Checkpoint layout (integers little-endian):
///
///   "LFSM" | version u32 = 1 | dim u64 | time_embedding u64 | hidden count u64
///   hidden widths u64... | ema_decay f64 | param count u64
///   params f64... | ema f64... | config length u64 | config UTF-8 JSON
struct Checkpoint {
  SurrogateModel model;
  std::string config_json;
};

void save_checkpoint(const SurrogateModel& model, const std::string& config_json,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lfm
