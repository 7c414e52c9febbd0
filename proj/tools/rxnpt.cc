#include <iostream>
#include <string>
#include <vector>

#include "rxnpt/cli.h"

int main(int argc, char **argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rxnpt::run_cli(args, std::cin, std::cout, std::cerr);
}
