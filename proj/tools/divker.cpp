#include "divker/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return divker::run_cli(argc, argv, std::cout, std::cerr); }
