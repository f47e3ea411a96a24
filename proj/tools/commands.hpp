#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wce::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 1,
  kDataError = 2,
  kDivergence = 3,
};

/// Runs one invocation; `args` excludes the program name. Diagnostics go to
/// `err` as a single line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wce::cli
