#include <iostream>

#include "cimnet/cli.hpp"

int main(int argc, char** argv) {
  return cimnet::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
