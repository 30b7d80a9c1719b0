#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace evalign {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Entry point shared by the binary and tests. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace evalign
