#include "tsarag/cli.hpp"

int main(int argc, char** argv) { return tsarag::cli::cli_main(argc, argv); }
