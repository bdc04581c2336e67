#include <iostream>

#include "epigraf/cli.hpp"

int main(int argc, char** argv) { return epigraf::dispatch(argc, argv, std::cout, std::cerr); }
