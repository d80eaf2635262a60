#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace langxpand::cli {

// Parses args (without the program name), runs one subcommand and returns the
// exit code: 0 success, 1 usage error, 2 data error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace langxpand::cli
