#pragma once

namespace rulmdp {

// Entry point of the `rulmdp` command. Exit codes: 0 success, 1 usage or
// validation error, 2 data error, 3 runtime failure.
int cli_main(int argc, char** argv);

}  // namespace rulmdp
