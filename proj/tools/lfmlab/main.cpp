#include <iostream>

#include "lfm/cli/commands.hpp"

int main(int argc, char** argv) { return lfm::cli::run(argc, argv, std::cout, std::cerr); }
