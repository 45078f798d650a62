#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hfcr {

/// Exit codes: 0 success, 2 configuration or validation error, 3 runtime or numeric error.
enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_runtime = 3 };

/// Entry point shared by the executable and the tests. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hfcr
