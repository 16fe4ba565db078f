#include <iostream>

#include "v2m/cli.hpp"

int main(int argc, char** argv) { return v2m::cli::run(argc, argv, std::cout, std::cerr); }
