#include <malloc.h>

#include "cli.hpp"

int main(int argc, char** argv) {
  // Training reuses tensors of tens of megabytes every step; keeping them on
  // the heap instead of fresh mappings avoids a page-fault storm.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return grasp::cli::run(argc, argv);
}
