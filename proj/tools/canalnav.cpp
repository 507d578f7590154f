#include <iostream>

#include "canalnav/cli.hpp"

int main(int argc, char **argv)
{
    return canal::run_cli(argc, argv, std::cout, std::cerr);
}
