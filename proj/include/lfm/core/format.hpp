#pragma once

#include <charconv>
#include <string>

namespace lfm {

/// Shortest decimal text that parses back to the same double. Used for every
/// number written to CSV or JSON so reruns stay byte-identical.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace lfm
