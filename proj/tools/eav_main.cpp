#include <iostream>

#include "eav/cli.hpp"

int main(int argc, char** argv) { return eav::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr); }
