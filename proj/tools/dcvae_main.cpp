#include <iostream>
#include <string>
#include <vector>

#include "dcvae/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return dcvae::run_cli(args, std::cout, std::cerr);
}
