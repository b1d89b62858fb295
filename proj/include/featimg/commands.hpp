#pragma once

// Subcommands behind the `featimg` executable. `run` parses arguments,
// dispatches and maps failures to exit codes:
//   0 success, 1 runtime failure, 2 usage or configuration error.

#include <iosfwd>

namespace featimg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace featimg::cli
