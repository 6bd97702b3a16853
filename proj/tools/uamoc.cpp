#include "uamoc/cli.hpp"

int main(int argc, char** argv) { return uamoc::cli::run(argc, argv, std::cout, std::cerr); }
