#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace sncp {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  /// Unexpected internal failure, or `replay --compare` found differences.
  kExitFailure = 1,
  kExitDataError = 2,
  kExitConfigError = 3,
  kExitSolverError = 4,
};

/// Runs one command line (without the program name), e.g.
/// {"decompose", "x.dnt", "--rank", "20", "--out", "run"}. Diagnostics go to `err`.
[[nodiscard]] int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// FNV-1a 64-bit digest of a file's bytes as 16 lowercase hex digits.
[[nodiscard]] std::string fnv1a64_file(const std::filesystem::path& path);

/// Flat `key = value` config text; `#` starts a comment, blank lines are
/// ignored, values may be quoted. Throws ConfigError on malformed lines or
/// repeated keys.
[[nodiscard]] std::map<std::string, std::string> parse_flat_config(std::istream& in, const std::string& source);

}  // namespace sncp
