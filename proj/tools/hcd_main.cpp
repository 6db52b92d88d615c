#include "hcd/cli.hpp"

int main(int argc, char** argv) { return hcd::run_cli(argc, argv); }
