#include "cli.hpp"

int main(int argc, char** argv) { return gpht::cli::run(argc, argv); }
