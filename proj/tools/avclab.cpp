#include "avclab/cli.hpp"

int main(int argc, char** argv) { return avc::cli::run(argc, argv); }
