#include "branchfs/cli/cli.hpp"

int main(int argc, char** argv) { return branchfs::cli::cli_main(argc, argv); }
