#pragma once

#include <string>
#include <vector>

namespace gradsam {

// The full command-line surface, callable in process for tests. `args` is
// argv without the program name. Returns the process exit code: 0 on success
// (and for --help), 2 for usage and configuration errors, 1 for runtime
// failures.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace gradsam
