#include <iostream>
#include <string>
#include <vector>

#include "latentdr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return latentdr::cli::run(args, std::cout, std::cerr);
}
