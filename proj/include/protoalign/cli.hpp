#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace protoalign {

/// Exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitFailure = 2 };

/// Parses `args` (without the program name) and runs the chosen subcommand.
/// Help text goes to `out`; diagnostics go to `err`; results go to files.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace protoalign
