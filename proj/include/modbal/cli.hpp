#pragma once

#include <iosfwd>

namespace modbal {

/// Entry point of the `modbal` tool. Returns 0 on success, 1 on a usage
/// error and 2 on a runtime failure.
int cli_main(int argc, const char* const* argv);

}  // namespace modbal
