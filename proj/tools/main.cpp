#include <iostream>
#include <string>
#include <vector>

#include "snode/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return snode::cli::run_command(args, std::cout, std::cerr);
}
