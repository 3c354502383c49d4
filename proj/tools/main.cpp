#include <iostream>

#include "asca/cli.hpp"
#include "asca/train.hpp"

int main(int argc, char** argv) {
    asca::train::tune_allocator();
    return asca::cli::dispatch(argc, argv, std::cout, std::cerr);
}
