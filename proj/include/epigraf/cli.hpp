#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>

namespace epigraf {

inline constexpr const char* kVersion = "0.1.0";

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitConfigError = 1, kExitRuntimeError = 2 };

/// Bad or unreadable configuration; maps to kExitConfigError.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs `epigraf <subcommand> --config <file>`. Results are printed to `out`,
/// progress and diagnostics to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a, used for the config hash in manifest.json.
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace epigraf
