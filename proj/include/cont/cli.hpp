#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cont {

// Entry point of the `cont` tool. Returns the process exit code: 0 on success, 2 for
// configuration and usage errors, 3 for bad input data, 4 for I/O failures, 5 when
// training diverges, 1 otherwise. Failures print one line to `err`:
//   error: kind=<kind> [key=<key>] message="<text>"
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace cont
