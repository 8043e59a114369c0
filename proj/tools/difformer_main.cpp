#include <iostream>

#include "difformer/cli.hpp"

int main(int argc, char** argv) { return difformer::cli::dispatch(argc, argv, std::cout, std::cerr); }
