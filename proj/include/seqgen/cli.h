#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace seqgen::cli {

// Exit codes: 0 success, 1 runtime/I-O failure or output mismatch, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace seqgen::cli
