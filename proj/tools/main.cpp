#include <string>
#include <vector>

#include "vitlab/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return vitlab::run_cli(args);
}
