#include "cli.hpp"

int main(int argc, char** argv) { return lcsurv::cli::run(argc, argv); }
