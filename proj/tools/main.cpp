#include "cli.hpp"

int main(int argc, char** argv) { return relate::cli::run(argc, argv); }
