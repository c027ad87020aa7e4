#include "featgen/cli.hpp"

int main(int argc, char** argv) { return featgen::cli::main(argc, argv); }
