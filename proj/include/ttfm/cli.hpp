#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ttfm {

/**
 * Entry point shared by the ttfm binary and the tests. args excludes the
 * program name. Returns the process exit code: 0 on success, 2 for usage or
 * configuration errors, 1 for any other failure. Failures print one JSON line
 * {"error": code, "message": ..., "issues": [...]} to err.
 */
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ttfm
