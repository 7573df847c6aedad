#include "evprob/cli.hpp"

int main(int argc, char** argv) { return evprob::cli::run(argc, argv); }
