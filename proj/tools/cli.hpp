#pragma once

#include <iosfwd>

namespace drt::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kIo = 3,
  kFormat = 4,
  kNumeric = 5,
};

/// Entry point behind the `drt` binary: drt synth|train|infer|eval|count.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace drt::cli
