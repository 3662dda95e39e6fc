#include <iostream>

#include "semcache/cli.hpp"

int main(int argc, char** argv) { return semcache::run_command(argc, argv, std::cout, std::cerr); }
