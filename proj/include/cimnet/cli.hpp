#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cimnet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;

/// Runs one `cimnet` command. `args` excludes the program name, e.g.
/// {"psnr", "a.ppm", "b.ppm"}. Returns 0 on success, 2 for usage or config
/// errors and 3 for data errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cimnet
