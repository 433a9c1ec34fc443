#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dotfoundry::cli {

enum ExitCode : int { kSuccess = 0, kRuntimeError = 1, kUsageError = 2 };

/// Runs the command line `args` (args[0] is the program name) and returns the
/// process exit code. Reports go to files and `out`; diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dotfoundry::cli
