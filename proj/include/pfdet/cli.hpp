#pragma once

#include <string>
#include <vector>

#include "pfdet/config.hpp"

namespace pfdet {

// Exit codes: 0 ok, 1 generic failure, 2 missing dataset, 3 non-finite loss,
// 4 checkpoint/registry mismatch.
int cli_main(int argc, const char* const* argv);

// Convenience overload for in-process invocation (tests, bindings).
int cli_run(const std::vector<std::string>& args);

}  // namespace pfdet
