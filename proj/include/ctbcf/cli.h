#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctbcf::cli {

/// Process exit statuses.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kInput = 2,
  kConsistency = 3,
};

/// Runs the command line `args` (without the program name). Errors are
/// reported as one line on `err` of the form `error[<kind>]: <message>`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctbcf::cli
