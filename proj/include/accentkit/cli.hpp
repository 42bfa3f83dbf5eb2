#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace accentkit {

// Entry point of the `accentkit` tool. `args` excludes the program name.
// Exit status: 0 success, 2 usage error, 1 any other failure (a JSON error
// record is written to `err`).
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, const char* const* argv);

}  // namespace accentkit
