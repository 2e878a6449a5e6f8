#include <iostream>

#include "ctc_odom/cli.hpp"

int main(int argc, char** argv) { return ctc::cli::run(argc, argv, std::cout, std::cerr); }
