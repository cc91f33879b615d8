#include "metalab/runner.hpp"

int main(int argc, char** argv) { return metalab::run_cli(argc, argv); }
