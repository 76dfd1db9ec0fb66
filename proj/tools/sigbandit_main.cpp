#include <string>
#include <vector>

#include "sigbandit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sigbandit::cli::dispatch(args);
}
