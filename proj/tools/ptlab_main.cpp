#include <cstdio>

int main() {
  std::puts("ptlab: placeholder");
  return 0;
}
