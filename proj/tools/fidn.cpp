#include <iostream>
#include <string>
#include <vector>

#include "fidn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fidn::cli::run(args, std::cout, std::cerr);
}
