#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tcap::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNoCandidates = 3;

// Runs the `tcap` command line; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tcap::cli
