#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cvd::cli {

/// Parses `args` (without the program name), runs the verb and returns the
/// process exit code: 0 on success, 1 for user errors, 2 for corruption.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cvd::cli
