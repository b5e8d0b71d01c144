#include <iostream>

#include "stclt/cli.hpp"

int main(int argc, char** argv) { return stclt::run_cli(argc, argv, std::cout, std::cerr); }
