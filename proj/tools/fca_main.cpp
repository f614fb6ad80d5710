#include <iostream>

int main() {
  std::cout << "fca: CLI not wired yet\n";
  return 1;
}
