#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfm/core/rng.hpp"

namespace lfm::cli {

using Json = nlohmann::ordered_json;

/// Every configuration key with its default value. Sections: seed, data,
/// transport, pruning, surrogate, c2f, metrics, output.
Json default_config();

/// Merges `user` over the defaults. Unknown sections or keys, and values
/// whose type differs from the default's, raise ConfigError naming the key.
/// Integer keys reject fractional numbers; float keys accept integers.
Json resolve_config(const Json& user);

/// Applies one `section.key=value` override in place. The value is parsed as
/// JSON when possible and taken as a string otherwise.
void apply_override(Json& config, const std::string& assignment);

/// Reads a JSON config file (IoError when unreadable, ConfigError when not
/// valid JSON).
Json read_config_file(const std::filesystem::path& path);

/// One `section.key = value` line per key, in definition order.
std::string defaults_table();

/// Generator of one module under the master seed: Rng(master, stream_id(name)).
Rng module_rng(std::uint64_t master, const std::string& name);

/// Two-space indented JSON with a trailing newline. Numbers use the shortest
/// round-trip text, so reruns are byte-identical.
std::string dump_json(const Json& j);

}  // namespace lfm::cli
