#include <iostream>

#include "gazekit/cli.hpp"

int main(int argc, char** argv) { return gazekit::run_cli(argc, argv, std::cout, std::cerr); }
