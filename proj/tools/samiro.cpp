#include <iostream>

#include "samiro/commands.hpp"

int main(int argc, char** argv) { return samiro::run_cli(argc, argv, std::cout, std::cerr); }
