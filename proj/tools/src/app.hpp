#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace natscan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Parses `args` (without the program name) and runs one subcommand.
/// Results go to `out`; help and usage errors go to `out` / `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace natscan::cli
