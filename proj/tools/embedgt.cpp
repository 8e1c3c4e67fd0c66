#include "embedgt/cli.hpp"

int main(int argc, char **argv) { return embedgt::cli::run(argc, argv); }
