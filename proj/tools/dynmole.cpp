#include <iostream>
#include <string>
#include <vector>

#include "dynmole/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dynmole::cli::run(args, std::cout, std::cerr);
}
