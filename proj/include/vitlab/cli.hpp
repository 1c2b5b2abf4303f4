#pragma once

#include <string>
#include <vector>

namespace vitlab {

// Single entry point behind the vitlab binary. Exit codes: 0 success,
// 1 validation/usage error, 2 I/O error.
int run_cli(const std::vector<std::string>& args);

}  // namespace vitlab
