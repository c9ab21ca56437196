#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fedrecon {

// Exit codes of the command-line driver.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// Runs one command line (args excludes the program name). Never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedrecon
