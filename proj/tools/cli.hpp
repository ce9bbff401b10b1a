// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace panobev::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;   // IO, parse or domain error
inline constexpr int kExitUsage = 2;     // no subcommand, unknown flag, bad flag value
inline constexpr int kExitCheckFailed = 3;  // gradcheck ran but a threshold was missed

/// Runs the tool with argv[1..] in `args`. Results go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace panobev::cli
