#include <cstdio>

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::printf("cipush: command-line interface not wired up yet\n");
  return 1;
}
