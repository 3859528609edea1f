#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hsteer::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitArtifact = 2;
inline constexpr int kExitNumeric = 3;

// Runs one command line (args[0] is the program name). Normal output goes
// to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hsteer::cli
