#include "pixscale/cli.hpp"

int main(int argc, char** argv) { return pixscale::cli::run(argc, argv); }
