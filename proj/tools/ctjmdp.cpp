#include "ctjmdp/cli.hpp"

int main(int argc, char** argv) { return ctjmdp::cli::run_cli(argc, argv); }
