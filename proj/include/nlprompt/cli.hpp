#pragma once

namespace nlprompt {

/// Entry point behind the `nlprompt` binary. Exit codes: 0 success, 1 usage
/// error, 2 runtime failure (including replay --check mismatches).
int cli_main(int argc, const char* const* argv);

}  // namespace nlprompt
