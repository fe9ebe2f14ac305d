#include <iostream>
#include <string>
#include <vector>

#include "t2ipal/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return t2ipal::cli::run(args, std::cout, std::cerr);
}
