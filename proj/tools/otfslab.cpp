// SPDX-License-Identifier: Apache-2.0
#include "otfs/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return otfs::run_cli(argc, argv, std::cout, std::cerr); }
