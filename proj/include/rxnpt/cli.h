#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rxnpt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitInternalError = 2;

// Runs the command line `args` (without the program name). Stream output goes
// to `out`, diagnostics to `err`; `in` feeds the line-oriented smiles tools.
int run_cli(const std::vector<std::string> &args, std::istream &in, std::ostream &out,
            std::ostream &err);

}  // namespace rxnpt
