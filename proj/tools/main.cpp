#include "vvc_cli.hpp"

int main(int argc, char** argv) { return vvc::cli::run(argc, argv); }
