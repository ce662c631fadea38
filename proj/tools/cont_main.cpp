#include "cont/cli.hpp"

int main(int argc, char** argv) { return cont::run_cli(argc, argv); }
