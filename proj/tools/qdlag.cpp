#include <iostream>

#include <qdlag/cli.hpp>

int main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return qdlag::cli::run_cli(args, std::cout, std::cerr);
}
