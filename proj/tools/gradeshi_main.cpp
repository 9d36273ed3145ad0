#include <iostream>
#include <string>
#include <vector>

#include "gradeshi/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return gradeshi::run_cli(args, std::cout, std::cerr);
}
