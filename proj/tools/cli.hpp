#pragma once

namespace taopd::cli {

/// Entry point for the taopd command-line tool.
/// Exit codes: 0 success, 1 usage error, 2 data-validation error,
/// 3 numerical failure.
int run(int argc, const char* const* argv);

}  // namespace taopd::cli
