#pragma once

#include <ostream>

namespace polysed::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    ok = 0,
    usage_error = 1,  // bad flags, config, or incompatible shapes
    data_error = 2,   // unreadable or inconsistent input files
    numeric_error = 3 // NaN/Inf during training or evaluation
};

/// Runs one subcommand. Results go to `out`; failures print a single line
/// "polysed: error code=<n> kind=<kind>: <message>" to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace polysed::cli
