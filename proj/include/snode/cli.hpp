#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace snode::cli {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutRootEnv = "SNODE_OUT_ROOT";

/// Runs one command line (args exclude the program name).
/// Returns 0 on success, 1 on usage or configuration errors, 2 on runtime failures.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace snode::cli
