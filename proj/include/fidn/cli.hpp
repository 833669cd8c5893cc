#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fidn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

// Entry point behind the `fidn` binary; args excludes the program name.
// Stdout always ends with a `STATUS: OK` or `STATUS: FAIL` line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fidn::cli
