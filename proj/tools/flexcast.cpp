#include <string>
#include <vector>

#include "flexcast/pipeline.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return flexcast::pipeline::run(args);
}
