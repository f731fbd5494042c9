#pragma once

// Single CLI entry point. Exit codes: 0 success, 2 usage/config errors,
// 1 runtime failures.

namespace featsteer {

int cli_main(int argc, char** argv);

}  // namespace featsteer
