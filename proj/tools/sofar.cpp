#include "sofar/cli.hpp"

int main(int argc, char** argv) { return sofar::cli::run(argc, argv); }
