#include "cslb/cli.hpp"

int main(int argc, char** argv) { return cslb::cli::run_main(argc, argv); }
