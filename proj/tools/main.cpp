#include <iostream>
#include <string>
#include <vector>

#include "evalign/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return evalign::run_cli(args, std::cout, std::cerr);
}
