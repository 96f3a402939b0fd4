#include <iostream>

#include "tmvol/cli.hpp"

int main(int argc, char** argv) { return tmvol::cli::run_cli(argc, argv, std::cout, std::cerr); }
