#include "lmmreg/cli.hpp"

int main(int argc, char** argv) { return lmmreg::cli_main(argc, argv); }
