#include "accentkit/cli.hpp"

int main(int argc, char** argv) { return accentkit::run_command(argc, argv); }
