#include "polysed/cli.h"

#include <iostream>

int main(int argc, char** argv) {
    return polysed::cli::run(argc, argv, std::cout, std::cerr);
}
