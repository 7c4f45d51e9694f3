#pragma once

#include <iostream>

namespace tempoflow {

// Exit codes returned by run_cli.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;
inline constexpr int kExitInternal = 1;

// Entry point of the `tempoflow` tool. Failures print a single line
//   error class=<class> code=<exit code> kind=<tag> message="<text>"
// to `err` and return the matching exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace tempoflow
