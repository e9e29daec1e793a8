#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fragmix::cli {

// Runs one fragmix command line. Returns the process exit code: 0 on
// success, 1 on runtime or numerical failure, 2 on usage or config errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fragmix::cli
