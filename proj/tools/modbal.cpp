#include "modbal/cli.hpp"

int main(int argc, char** argv) { return modbal::cli_main(argc, argv); }
