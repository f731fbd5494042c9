#include "featsteer/cli.hpp"

int main(int argc, char** argv) { return featsteer::cli_main(argc, argv); }
