#include <iostream>

#include "mbt/cli.hpp"

int main(int argc, char** argv) {
	return mbt::cli::run(argc, argv, std::cout, std::cerr);
}
