// Error taxonomy and small shared utilities.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hcd {

// User-facing failures (bad input, bad config, bad files) map to exit code 1;
// InternalError (broken invariant inside the library) maps to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidArgument : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IntegrityError : Error { using Error::Error; };
struct InternalError : Error { using Error::Error; };

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

inline void require_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline void require_internal(bool cond, const std::string& msg) {
  if (!cond) throw InternalError(msg);
}

}  // namespace hcd
