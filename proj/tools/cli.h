#pragma once

namespace ragguard {

// Entry point of the ragguard command line. Returns the process exit code:
// 0 on success, 1 on an operational failure, 2 on a usage error.
int RunCli(int argc, const char* const* argv);

}  // namespace ragguard
