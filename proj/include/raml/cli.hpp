#pragma once

#include <span>
#include <string>
#include <vector>

namespace raml::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. `args` excludes the program name, e.g.
/// {"verify-theorem", "--trials", "1000"}.
int run(std::span<const std::string> args);
int run(int argc, char** argv);

}  // namespace raml::cli
