#include <iostream>

#include "pcq/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pcq::cli::run(args, std::cout, std::cerr);
}
