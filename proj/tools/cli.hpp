#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace grasp::cli {

/// Runs one command line (without the program name). Returns 0 on success,
/// 1 on a runtime failure and 2 on a usage error; messages go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

}  // namespace grasp::cli
