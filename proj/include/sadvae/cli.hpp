#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sadvae {

/// Runs one command line (args excludes the program name). Returns 0 on
/// success, 1 on a runtime failure and 2 on a usage error; diagnostics go to
/// err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace sadvae
