#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dsguard::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable consulted for the key path when --key is absent.
inline constexpr const char* kKeyEnv = "DSGUARD_KEY";

/// Entry point shared by the executable and the integration tests.
/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dsguard::cli
