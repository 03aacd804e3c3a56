#include <iostream>

#include "epf/cli.hpp"

int main(int argc, char** argv) {
    return epf::cli::run(argc, argv, std::cout, std::cerr);
}
