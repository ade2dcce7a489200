#include <iostream>

#include "misloc/cli.hpp"

int main(int argc, char** argv)
{
  return misloc::cli_main(argc, argv, std::cerr);
}
