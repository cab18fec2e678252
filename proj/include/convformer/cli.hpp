#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace convformer {

// Entry point of the convformer tool. args excludes the program name.
// Returns 0 on success, 2 on usage errors and 1 on any other failure, which
// is reported as a single "error: <kind>: <message>" line on err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace convformer
