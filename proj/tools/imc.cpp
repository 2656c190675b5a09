#include "imc/cli.hpp"

int main(int argc, char** argv) { return imc::cli::cli_main(argc, argv); }
