#include <string>
#include <vector>

#include "accar/cli.hpp"

int main(int argc, char** argv) {
  return accar::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
