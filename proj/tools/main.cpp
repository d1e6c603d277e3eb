#include "cli.hpp"

int main(int argc, char** argv) { return kt::cli::run_cli(argc, argv); }
