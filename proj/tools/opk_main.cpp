#include "opk/io.hpp"

int main(int argc, char** argv) { return opk::run_cli(argc, argv); }
