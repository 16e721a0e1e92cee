#include "seqgen/cli.h"

int main(int argc, char** argv) {
  return seqgen::cli::run(argc, argv);
}
