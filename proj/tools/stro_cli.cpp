#include "stro/cli.hpp"

int main(int argc, char** argv) { return stro::run_cli(argc, argv); }
