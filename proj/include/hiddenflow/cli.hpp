#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hiddenflow {

/// Command-line entry point. `args` excludes the program name. Returns 0 on
/// success, 1 on invalid input (one diagnostic line on `err`), 2 when the
/// event cannot succeed even without blocking.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hiddenflow
