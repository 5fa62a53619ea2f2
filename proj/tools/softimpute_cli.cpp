#include "commands.hpp"

int main(int argc, char** argv) { return softimpute::cli::run_cli(argc, argv); }
