#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace comma {

/// Runs the `comma` command line. `args` excludes the program name.
/// Returns the process exit code: 0 on success, 1 on a failed command or
/// gradient check, 2 on usage or configuration errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace comma
