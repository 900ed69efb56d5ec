#include "effnas/cli/app.hpp"

int main(int argc, char** argv) {
  return effnas::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
