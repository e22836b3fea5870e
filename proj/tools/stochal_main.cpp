#include "stochal/cli.hpp"

int main(int argc, char** argv) { return stochal::cli::run_cli(argc, argv); }
