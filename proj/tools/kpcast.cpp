#include "kpcast/cli.hpp"

int main(int argc, char** argv) { return kpcast::cli::run_cli(argc, argv); }
