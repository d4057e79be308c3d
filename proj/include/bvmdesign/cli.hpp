#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bvmdesign {

enum ExitCode : int { exit_ok = 0, exit_usage = 2, exit_numerical = 3 };

/// Runs the command-line interface. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bvmdesign
