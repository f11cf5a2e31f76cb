#include "cli.h"

int main(int argc, char** argv) { return ragguard::RunCli(argc, argv); }
