#include "fedfeed/cli.hpp"

int main(int argc, char** argv) { return fedfeed::run_cli(argc, argv); }
