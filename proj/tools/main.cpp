#include "cli.hpp"

int main(int argc, char** argv) { return taopd::cli::run(argc, argv); }
