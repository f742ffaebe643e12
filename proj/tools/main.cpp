#include "cli.hpp"

int main(int argc, char** argv) { return funreg::cli::run(argc, argv); }
