#include <iostream>

#include "featimg/commands.hpp"

int main(int argc, char** argv) {
    return featimg::cli::run(argc, argv, std::cout, std::cerr);
}
