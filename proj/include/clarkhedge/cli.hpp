/**
 * @file cli.hpp
 * @brief Configuration-driven command line: simulate, verify, hedge, converge, novikov.
 *
 * Exit codes: 0 success, 1 usage or configuration error, 2 failed pass
 * criteria, 3 every path numerically invalid.
 */

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace clarkhedge {

enum ExitCode : int {
    exit_ok = 0,
    exit_config_error = 1,
    exit_failed_criteria = 2,
    exit_all_invalid = 3,
};

/// Environment variable naming the default output directory.
inline constexpr const char* output_dir_env = "CLARKHEDGE_OUT_DIR";

/// args excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, char** argv);

} // namespace clarkhedge
