#include "m3vb/cli.hpp"

int main(int argc, char** argv) { return m3vb::cli_main(argc, argv); }
