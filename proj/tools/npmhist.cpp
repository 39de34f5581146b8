#include "npmhist/cli.hpp"

int main(int argc, char** argv) { return npmhist::cli::run(argc, argv); }
