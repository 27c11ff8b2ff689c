#include "ropdda/cli/commands.hpp"

#include <iostream>

int main(int argc, char **argv) { return ropdda::cli::run_cli(argc, argv, std::cout, std::cerr); }
