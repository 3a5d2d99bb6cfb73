// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace pointbox {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Parses `args` (without the program name), runs the command and returns
/// the process exit code. Messages go to stderr and the log.
int parse_and_dispatch(const std::vector<std::string>& args);

}  // namespace pointbox
