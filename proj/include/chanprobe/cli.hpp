#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace chanprobe {

// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // analysis error on valid input files
inline constexpr int kExitUsage = 2;    // bad flags, unreadable or missing input

/// Runs `chanprobe <corr|select|score|coverage> ...`. `args` excludes the
/// program name. Reports go to `--out` when given, otherwise to `out`;
/// diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace chanprobe
