#include "mfda/cli.hpp"

int main(int argc, char** argv) { return mfda::cli::run(argc, argv); }
