#include "motb/cli/commands.hpp"

int main(int argc, char** argv) { return motb::cli::run_cli(argc, argv); }
