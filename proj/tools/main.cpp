#include <iostream>

#include "nesy/cli.hpp"

int main(int argc, char** argv) { return nesy::run_cli(argc, argv, std::cout, std::cerr); }
