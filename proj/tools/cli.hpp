#pragma once

#include <string>
#include <vector>

namespace empl::cli {

// Process exit codes. Scripts may branch on these.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,       // any other error
  kUsage = 2,         // malformed command line
  kConfig = 3,        // config key missing / invalid, bad paths, task mismatch
  kFormat = 4,        // dump, checkpoint or report bytes rejected
  kNumerical = 5,     // divergence or non-finite values
  kGradCheck = 6,     // check-grad found an error at or above tolerance
};

// Runs `empl <args...>`; args excludes the program name. Diagnostics go to
// stderr; artifacts go to the --out directory.
int run_cli(const std::vector<std::string>& args);

}  // namespace empl::cli
