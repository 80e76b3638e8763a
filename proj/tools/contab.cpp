#include "contab/cli.hpp"

int main(int argc, char** argv) { return contab::cli::run(argc, argv); }
