#include <iostream>
#include <string>
#include <vector>

#include "unitmll/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return unitmll::RunCli(args, std::cout, std::cerr);
}
