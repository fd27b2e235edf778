#include "soda/cli/commands.hpp"

int main(int argc, char** argv) { return soda::cli::run(argc, argv); }
