#pragma once

namespace kt::cli {

enum ExitCode : int {
  kSuccess = 0,
  kFailure = 1,
  kConfigError = 2,
  kSolverFailure = 3,
  kDivergence = 4,
};

// Entry point of the `kt` tool; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace kt::cli
