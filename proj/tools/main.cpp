#include "fsim/cli.hpp"

int main(int argc, char** argv) { return fsim::run_cli(argc, argv); }
