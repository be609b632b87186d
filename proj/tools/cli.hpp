#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ptune::cli {

// Exit codes: 0 success, 2 input or config error, 3 model identity error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitIdentity = 3;

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ptune::cli
