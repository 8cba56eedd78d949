#pragma once

#include <ostream>

namespace cltmle::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2, kCalibration = 3 };

// Entry point of the `cltmle` tool. Streams are parameters so tests can run
// commands in-process.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cltmle::cli
