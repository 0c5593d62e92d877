// Writes the golden transition table used by the env regression tests.
#include <cstdlib>
#include <iostream>

#include "riskgrad/envs/golden.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: record_golden OUTPUT.json\n";
    return 2;
  }
  riskgrad::envs::write_golden_file(argv[1], 10, 20240601);
  return 0;
}
