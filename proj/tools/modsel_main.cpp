#include <iostream>

#include "modsel/cli.hpp"

int main(int argc, char** argv) { return modsel::run_cli(argc, argv, std::cout, std::cerr); }
