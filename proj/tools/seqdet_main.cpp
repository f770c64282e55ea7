#include <cstdio>

int main() {
  std::puts("seqdet: subcommands arrive with the pipeline modules");
  return 0;
}
