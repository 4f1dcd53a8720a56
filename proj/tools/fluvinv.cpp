#include "fluvinv/cli_io.hpp"

int main(int argc, char** argv) { return fluvinv::run_cli(argc, argv); }
