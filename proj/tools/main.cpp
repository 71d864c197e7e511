#include <iostream>

#include "app.hpp"

int main(int argc, char** argv) { return sveb::cli::main(argc, argv, std::cout, std::cerr); }
