#include <iostream>

#include "convformer/cli.hpp"

int main(int argc, char** argv) {
    return convformer::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
