#include <iostream>

#include "assembly/harness.hpp"

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  return assembly::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cin, std::cout, std::cerr);
}
