#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace steer {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs the `steer` command line with `args` (without the program name).
/// Returns 0 on success, 1 on a runtime failure and 2 on a usage error,
/// including a missing input file.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string tool_version();

}  // namespace steer
