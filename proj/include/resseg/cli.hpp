#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace resseg::cli {

enum ExitCode : int {
  kOk = 0,
  kRuntimeError = 1,
  kUsageError = 2,
  kCheckFailed = 3,
};

/// Runs one command. args excludes the program name. Every subcommand also
/// accepts --config FILE holding `key = value` lines (`#` starts a comment);
/// keys are long option names and command-line flags win.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace resseg::cli
