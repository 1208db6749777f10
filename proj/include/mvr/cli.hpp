#pragma once

namespace mvr {

// Full command-line entry point: parses argv, dispatches subcommands, maps
// exceptions to exit codes (1 validation, 2 numeric, 3 I/O).
int cli_main(int argc, char** argv);

}  // namespace mvr
