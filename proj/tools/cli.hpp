#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mpln::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
  ok = 0,
  runtime_failure = 1,
  usage_error = 2,
};

/// Runs one command line (without the program name), e.g.
/// {"fit", "--counts", "x.csv", "-o", "out"}. Messages go to `out` and `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mpln::cli
