#include <iostream>
#include <string>
#include <vector>

#include "gcav/cli.h"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return gcav::run_cli(args, std::cout, std::cerr);
}
