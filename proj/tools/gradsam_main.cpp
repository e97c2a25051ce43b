#include "gradsam/cli.hpp"

int main(int argc, char** argv) { return gradsam::run_cli(argc, argv); }
