#include "rulmdp/cli.hpp"

int main(int argc, char** argv) { return rulmdp::cli_main(argc, argv); }
