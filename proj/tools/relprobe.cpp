#include "relprobe/cli.hpp"

int main(int argc, char** argv) { return relprobe::run_cli(argc, argv); }
