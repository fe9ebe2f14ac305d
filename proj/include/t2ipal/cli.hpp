#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace t2ipal::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;   // a check ran and failed (gradcheck), numeric blow-up
inline constexpr int kExitIo = 2;        // unreadable/unwritable file, malformed input, bad flags
inline constexpr int kExitSemantic = 3;  // inconsistent config or dimensions

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace t2ipal::cli
