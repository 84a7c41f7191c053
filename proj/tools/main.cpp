// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "wid/cli.hpp"

int main(int argc, char** argv) { return wid::cli_main(argc, argv, std::cout, std::cerr); }
