#include "comma/cli.hpp"

int main(int argc, char** argv) { return comma::run_cli(argc, argv); }
