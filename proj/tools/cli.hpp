#pragma once

#include <iosfwd>

namespace lapsynth::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. Usage problems print the usage text and return 2;
/// runtime failures print a diagnostic to `err` and return 1.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lapsynth::cli
