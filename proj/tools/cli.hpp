#pragma once

#include <ostream>

namespace tellme::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kOverflow = 3 };

// `tellme` entry point: run | make-toy | sched | pack.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tellme::cli
